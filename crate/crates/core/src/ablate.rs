//! Train-and-score sweeps over architectural toggles.

use serde::{Deserialize, Serialize};

use crate::blocks::{Activation, ChannelMixer};
use crate::data::{Dataset, NormStats, Split};
use crate::error::Result;
use crate::metrics::{acc_channel, lat_weights, AnomalyMode};
use crate::model::{KaiModel, ModelConfig};
use crate::padding::PaddingMode;
use crate::rollout::rollout;
use crate::tensor::Scalar;
use crate::training::{normalize_all, split_wrmse, train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub mixer: ChannelMixer,
    pub activation: Activation,
    pub padding: PaddingMode,
    #[serde(default = "default_true")]
    pub scale_invariant: bool,
}

fn default_true() -> bool {
    true
}

impl Variant {
    pub fn label(&self) -> String {
        let mut s = format!(
            "{}/{}/{}",
            snake(&self.mixer),
            snake(&self.activation),
            snake(&self.padding)
        );
        if !self.scale_invariant {
            s.push_str("/multiscale");
        }
        s
    }

    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        let mut cfg = base.clone();
        cfg.block.channel_mixer = self.mixer;
        cfg.block.activation = self.activation;
        cfg.block.padding_mode = self.padding;
        cfg.scale_invariant = self.scale_invariant;
        cfg
    }
}

/// Serde's snake_case spelling of a unit enum variant.
fn snake<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

/// All twelve mixer x activation x padding combinations, ordered from the
/// weakest design to the full one: MLP, ConvMLP, pointwise; LeakyReLU, GELU;
/// zero, geocyclic.
pub fn default_variants() -> Vec<Variant> {
    let mut out = Vec::with_capacity(12);
    for mixer in [
        ChannelMixer::Mlp,
        ChannelMixer::ConvMlp,
        ChannelMixer::PointwiseConv,
    ] {
        for activation in [Activation::LeakyRelu, Activation::Gelu] {
            for padding in [PaddingMode::Zero, PaddingMode::Geocyclic] {
                out.push(Variant {
                    mixer,
                    activation,
                    padding,
                    scale_invariant: true,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub variant: Variant,
    pub params: usize,
    pub steps: usize,
    pub final_train_loss: f64,
    /// One-step weighted RMSE on the validation split, normalized units.
    pub val_wrmse: Option<f64>,
    /// Lead-1 ACC on the validation split, averaged over non-static variables.
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.12e}")).unwrap_or_default();
        let mut out = String::from("variant,params,steps,final_train_loss,val_wrmse,val_acc\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.12e},{},{}\n",
                r.label,
                r.params,
                r.steps,
                r.final_train_loss,
                opt(r.val_wrmse),
                opt(r.val_acc)
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Every reported number is finite.
    pub fn all_finite(&self) -> bool {
        self.rows.iter().all(|r| {
            r.final_train_loss.is_finite()
                && r.val_wrmse.is_none_or(f64::is_finite)
                && r.val_acc.is_none_or(f64::is_finite)
        })
    }
}

/// Train every variant from the same seed with the same budget, then score it
/// on the validation split.
pub fn ablate<T: Scalar>(
    dataset: &Dataset,
    stats: &NormStats,
    base: &ModelConfig,
    variants: &[Variant],
    train_cfg: &TrainConfig,
    model_seed: u64,
) -> Result<AblationReport> {
    let w = lat_weights(&dataset.first().grid.lat)?;
    let inputs = normalize_all::<T>(dataset, stats)?;
    let val_pairs = dataset.pairs(Split::Val);
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let mut model = KaiModel::<T>::new(v.apply(base), model_seed)?;
        let outcome = train(&mut model, dataset, stats, train_cfg)?;
        let val_wrmse = split_wrmse(&model, &inputs, &val_pairs, &w)?;
        let val_acc = lead1_acc(&model, dataset, stats, &val_pairs)?;
        rows.push(AblationRow {
            label: v.label(),
            variant: *v,
            params: model.params().num_scalars(),
            steps: outcome.steps,
            final_train_loss: outcome.log.last().map_or(f64::NAN, |e| e.train_loss),
            val_wrmse,
            val_acc,
        });
    }
    Ok(AblationReport { rows })
}

fn lead1_acc<T: Scalar>(
    model: &KaiModel<T>,
    dataset: &Dataset,
    stats: &NormStats,
    pairs: &[usize],
) -> Result<Option<f64>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let fields = dataset.fields();
    let w = lat_weights(&fields[0].grid.lat)?;
    let mut forecast = Vec::with_capacity(pairs.len());
    let mut truth = Vec::with_capacity(pairs.len());
    for &t in pairs {
        let run = rollout(model, &fields[t], 1, stats, None)?;
        forecast.extend(run.fields);
        truth.push(fields[t + 1].clone());
    }
    let dynamic: Vec<usize> = (0..fields[0].num_channels())
        .filter(|&c| !fields[0].channels[c].is_static)
        .collect();
    if dynamic.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for &c in &dynamic {
        total += acc_channel(&forecast, &truth, &w, AnomalyMode::SpatialMeanRemoved, c)?;
    }
    Ok(Some(total / dynamic.len() as f64))
}
