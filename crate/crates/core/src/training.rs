//! One-step training with a latitude-weighted L2 loss, AdamW, and cosine
//! annealing. Every reduction runs in a fixed order so that two runs with the
//! same seed and precision agree to the bit.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, NormStats, Split};
use crate::error::{Error, Result};
use crate::metrics::LatWeights;
use crate::model::KaiModel;
use crate::tensor::{self, ParamSet, Scalar, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!(
                "unknown precision `{other}` (expected f32 or f64)"
            ))),
        }
    }
}

/// Mean over channels and grid of `A_i * (pred - target)^2`.
pub fn loss<T: Scalar>(pred: &Var<T>, target: &Var<T>, w: &LatWeights) -> Result<Var<T>> {
    tensor::weighted_mse(pred, target, &w.a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments, kept in f64 regardless of parameter precision.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamWState {
    pub fn new<T: Scalar>(params: &ParamSet<T>) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay and bias correction.
pub fn adamw_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &[Vec<f64>],
    state: &mut AdamWState,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape(
            "adamw_step",
            format!(
                "{} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (k, p) in params.iter_mut().enumerate() {
        let (g, m, v) = (&grads[k], &mut state.m[k], &mut state.v[k]);
        if g.len() != p.value.numel() || m.len() != g.len() {
            return Err(Error::shape(
                "adamw_step",
                format!("gradient length mismatch for `{}`", p.name),
            ));
        }
        for (i, w) in p.value.data_mut().iter_mut().enumerate() {
            let mut x = w.to_f64_lossy();
            x -= lr * cfg.weight_decay * x;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            x -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
            *w = T::from_f64_lossy(x);
        }
    }
    Ok(())
}

/// `lr_min + (lr_max - lr_min) * (1 + cos(pi * epoch / t_max)) / 2`.
pub fn cosine_lr(epoch: usize, lr_max: f64, lr_min: f64, t_max: usize) -> Result<f64> {
    if t_max == 0 || epoch > t_max {
        return Err(Error::Config(format!(
            "epoch {epoch} outside the schedule [0, {t_max}]"
        )));
    }
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * epoch as f64 / t_max as f64).cos()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_min: f64,
    pub max_epochs: usize,
    /// Cosine period in epochs; defaults to `max_epochs`.
    pub t_max: Option<usize>,
    pub adamw: AdamWConfig,
    pub batch_size: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    pub precision: Precision,
    /// Stop after this many epochs without validation improvement.
    pub patience: Option<usize>,
    /// Global gradient-norm clip; off by default.
    pub clip_norm: Option<f64>,
    /// Hard cap on optimizer steps.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            lr_min: 0.0,
            max_epochs: 150,
            t_max: None,
            adamw: AdamWConfig::default(),
            batch_size: 4,
            seed: 0,
            precision: Precision::F32,
            patience: None,
            clip_norm: None,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr) {
            return bad(format!("lr_min {} must lie in [0, lr]", self.lr_min));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.t_max == Some(0) {
            return bad("t_max must be at least 1".into());
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return bad("clip_norm must be positive".into());
        }
        Ok(())
    }

    pub fn t_max(&self) -> usize {
        self.t_max.unwrap_or(self.max_epochs)
    }

    /// Learning rate for an epoch; held at `lr_min` beyond the cosine period.
    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        cosine_lr(epoch.min(self.t_max()), self.lr, self.lr_min, self.t_max())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_wrmse: Option<f64>,
}

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,lr,train_loss,val_wrmse\n");
    for e in log {
        let val = e.val_wrmse.map(|v| format!("{v:.12e}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{:.12e},{:.12e},{}\n",
            e.epoch, e.lr, e.train_loss, val
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar> {
    pub log: Vec<EpochLog>,
    pub steps: usize,
    /// Parameters at the best validation score, or the final ones without a validation split.
    pub best_params: ParamSet<T>,
    pub best_epoch: usize,
    pub best_val_wrmse: Option<f64>,
    pub stopped_early: bool,
}

/// Normalized inputs for every day of the dataset.
pub fn normalize_all<T: Scalar>(dataset: &Dataset, stats: &NormStats) -> Result<Vec<Tensor<T>>> {
    dataset
        .fields()
        .iter()
        .map(|f| stats.normalize(&f.data))
        .collect()
}

/// `sqrt` of the mean one-step loss over the pairs of a split, in normalized units.
pub fn split_wrmse<T: Scalar>(
    model: &KaiModel<T>,
    inputs: &[Tensor<T>],
    pairs: &[usize],
    w: &LatWeights,
) -> Result<Option<f64>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for &t in pairs {
        let pred = Var::constant(model.forward(&inputs[t])?);
        let l = loss(&pred, &Var::constant(inputs[t + 1].clone()), w)?;
        total += l.value().data()[0].to_f64_lossy();
    }
    Ok(Some((total / pairs.len() as f64).sqrt()))
}

/// Averaged gradients and mean loss over one batch of training pairs.
fn batch_gradients<T: Scalar>(
    model: &KaiModel<T>,
    inputs: &[Tensor<T>],
    batch: &[usize],
    w: &LatWeights,
) -> Result<(Vec<Vec<f64>>, f64)> {
    let mut sum: Vec<Vec<f64>> = model
        .params()
        .iter()
        .map(|p| vec![0.0; p.value.numel()])
        .collect();
    let mut loss_sum = 0.0;
    for &t in batch {
        let bound = model.params().bind(true);
        let x = Var::constant(inputs[t].clone());
        let pred = model.forward_graph(&bound, &x)?;
        let l = loss(&pred, &Var::constant(inputs[t + 1].clone()), w)?;
        l.backward()?;
        loss_sum += l.value().data()[0].to_f64_lossy();
        for (acc, g) in sum.iter_mut().zip(bound.grads()) {
            acc.iter_mut()
                .zip(g)
                .for_each(|(a, b)| *a += b.to_f64_lossy());
        }
    }
    let n = batch.len() as f64;
    for g in &mut sum {
        g.iter_mut().for_each(|v| *v /= n);
    }
    let mean = loss_sum / n;
    if !mean.is_finite() || sum.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::Numerical("non-finite loss or gradient".into()));
    }
    Ok((sum, mean))
}

fn clip(grads: &mut [Vec<f64>], max_norm: f64) {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
}

/// Train on consecutive-day pairs of the training split.
///
/// On a non-finite loss or update the model is left holding the last finite
/// parameters and a numerical error naming the epoch and step is returned.
pub fn train<T: Scalar>(
    model: &mut KaiModel<T>,
    dataset: &Dataset,
    stats: &NormStats,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let w = crate::metrics::lat_weights(&dataset.first().grid.lat)?;
    let inputs = normalize_all::<T>(dataset, stats)?;
    let train_pairs = dataset.pairs(Split::Train);
    if train_pairs.is_empty() {
        return Err(Error::Data(
            "training split contains no consecutive-day pairs".into(),
        ));
    }
    let val_pairs = dataset.pairs(Split::Val);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamWState::new(model.params());
    let mut log = Vec::new();
    let mut steps = 0;
    let mut best: Option<(f64, usize, ParamSet<T>)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    'epochs: for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr_at(epoch)?;
        let mut order = train_pairs.clone();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        let mut capped = false;
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                capped = true;
                break;
            }
            let fail =
                |e: Error| Error::Numerical(format!("epoch {epoch}, step {}: {e}", steps + 1));
            let (mut grads, l) =
                batch_gradients(model, &inputs, batch, &w).map_err(|e| match e {
                    Error::NonFinite { .. } | Error::Numerical(_) => fail(e),
                    other => other,
                })?;
            if let Some(c) = cfg.clip_norm {
                clip(&mut grads, c);
            }
            let last_good = model.params().clone();
            adamw_step(model.params_mut(), &grads, &mut state, lr, &cfg.adamw)?;
            if model.params().iter().any(|p| !p.value.is_finite()) {
                *model.params_mut() = last_good;
                return Err(fail(Error::Numerical(
                    "update produced non-finite parameters".into(),
                )));
            }
            loss_sum += l;
            batches += 1;
            steps += 1;
        }
        if batches == 0 {
            break;
        }
        let val = split_wrmse(model, &inputs, &val_pairs, &w)?;
        log.push(EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / batches as f64,
            val_wrmse: val,
        });
        match (val, &best) {
            (Some(v), Some((b, _, _))) if v >= *b => since_best += 1,
            (Some(v), _) => {
                best = Some((v, epoch, model.params().clone()));
                since_best = 0;
            }
            (None, _) => {}
        }
        if cfg.patience.is_some_and(|p| since_best >= p) {
            stopped_early = true;
            break 'epochs;
        }
        if capped || cfg.max_steps.is_some_and(|m| steps >= m) {
            break;
        }
    }

    let last_epoch = log.last().map_or(0, |e| e.epoch);
    let (best_val_wrmse, best_epoch, best_params) = match best {
        Some((v, e, p)) => (Some(v), e, p),
        None => (None, last_epoch, model.params().clone()),
    };
    Ok(TrainOutcome {
        log,
        steps,
        best_params,
        best_epoch,
        best_val_wrmse,
        stopped_early,
    })
}
