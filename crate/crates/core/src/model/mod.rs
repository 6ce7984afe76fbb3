//! Full network: stem, four stages of residual blocks joined by depth-scaling
//! layers, and the output head.

mod checkpoint;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::blocks::{
    BlockConfig, BlockSettings, ChannelMixer, DepthScale, Head, InceptionMixerConfig, Init,
    KaiBlock, Stem,
};
use crate::error::{Error, Result};
use crate::padding::PaddingMode;
use crate::tensor::{self, Bound, ParamSet, Scalar, Tensor, Var};

pub const NUM_STAGES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub depths: [usize; NUM_STAGES],
    pub dims: [usize; NUM_STAGES],
    pub mixer: InceptionMixerConfig,
    pub block: BlockSettings,
    pub grid: GridShape,
    /// Keep full resolution in every layer. `false` turns the depth-scaling
    /// layers into stride-2 projections and upsamples before the head.
    pub scale_invariant: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ModelConfig {
    /// 67 channels on the 72 x 144 grid, depths [3, 3, 15, 3], dims [48, 96, 192, 288].
    pub fn paper() -> Self {
        Self {
            in_channels: 67,
            out_channels: 67,
            depths: [3, 3, 15, 3],
            dims: [48, 96, 192, 288],
            mixer: InceptionMixerConfig::default(),
            block: BlockSettings::default(),
            grid: GridShape {
                height: 72,
                width: 144,
            },
            scale_invariant: true,
        }
    }

    /// Small configuration for tests and desk-scale experiments.
    pub fn desk(channels: usize, height: usize, width: usize) -> Self {
        Self {
            in_channels: channels,
            out_channels: channels,
            depths: [1, 1, 2, 1],
            dims: [8, 16, 32, 48],
            grid: GridShape { height, width },
            ..Self::paper()
        }
    }

    /// Spatial extent seen by each stage.
    pub fn stage_grids(&self) -> [(usize, usize); NUM_STAGES] {
        let mut out = [(self.grid.height, self.grid.width); NUM_STAGES];
        if !self.scale_invariant {
            for (s, g) in out.iter_mut().enumerate() {
                *g = (self.grid.height >> s, self.grid.width >> s);
            }
        }
        out
    }

    pub fn block_config(&self, stage: usize) -> BlockConfig {
        BlockConfig {
            channels: self.dims[stage],
            settings: self.block,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.in_channels == 0 || self.out_channels == 0 {
            return cfg("channel counts must be positive".into());
        }
        if self.dims.contains(&0) {
            return cfg(format!("stage dims must be positive, got {:?}", self.dims));
        }
        if self.dims.windows(2).any(|w| w[1] < w[0]) {
            return cfg(format!(
                "stage dims must be non-decreasing, got {:?}",
                self.dims
            ));
        }
        self.mixer.validate()?;
        for s in 0..NUM_STAGES {
            self.mixer.branch_sizes(self.dims[s])?;
            self.block_config(s).hidden()?;
        }
        let GridShape { height, width } = self.grid;
        if height == 0 || width == 0 {
            return cfg("grid extents must be positive".into());
        }
        if !self.scale_invariant && (height % 8 != 0 || width % 8 != 0) {
            return cfg(format!(
                "grid {height}x{width} must be divisible by 8 when scale invariance is disabled"
            ));
        }
        let geo = self.block.padding_mode == PaddingMode::Geocyclic;
        let band = (self.mixer.band_kernel - 1) / 2;
        let square = (self.mixer.square_kernel - 1) / 2;
        let reach = band.max(square).max(1);
        for (s, (h, w)) in self.stage_grids().into_iter().enumerate() {
            if geo && w % 2 != 0 {
                return cfg(format!(
                    "stage {s} grid width {w} must be even for geocyclic padding"
                ));
            }
            if reach > h || reach > w {
                return cfg(format!(
                    "stage {s} grid {h}x{w} is smaller than the kernel half-width {reach}"
                ));
            }
        }
        Ok(())
    }
}

/// One row of the parameter breakdown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamCountRow {
    pub module: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub total: usize,
    pub rows: Vec<ParamCountRow>,
}

impl fmt::Display for ParamCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in &self.rows {
            writeln!(f, "{:<24} {:>12}", row.module, row.count)?;
        }
        write!(f, "{:<24} {:>12}", "total", self.total)
    }
}

/// Closed-form scalar parameter count, per module.
pub fn param_count(config: &ModelConfig) -> Result<ParamCount> {
    config.validate()?;
    let (cin, cout) = (config.in_channels, config.out_channels);
    let d = config.dims;
    let sq = config.mixer.square_kernel;
    let band = config.mixer.band_kernel;
    let mut rows = Vec::new();

    rows.push(ParamCountRow {
        module: "stem".into(),
        count: cin * 9 + cin + cin * d[0] + d[0] + 2 * d[0],
    });
    for s in 0..NUM_STAGES {
        let c = d[s];
        let h = config.block_config(s).hidden()?;
        let g = config.mixer.branch_sizes(c)?[0];
        let mut per_block = g * sq * sq + 2 * g * band + 2 * c + c * h + h + h * c + c;
        if config.block.channel_mixer == ChannelMixer::ConvMlp {
            per_block += h * 9 + h;
        }
        rows.push(ParamCountRow {
            module: format!("stage{s} ({}x{c})", config.depths[s]),
            count: config.depths[s] * per_block,
        });
        if s + 1 < NUM_STAGES {
            rows.push(ParamCountRow {
                module: format!("scale{s} ({c}->{})", d[s + 1]),
                count: 2 * c + c * d[s + 1] + d[s + 1],
            });
        }
    }
    let last = d[NUM_STAGES - 1];
    rows.push(ParamCountRow {
        module: "head".into(),
        count: last * 9 + last + last * cout + cout,
    });
    Ok(ParamCount {
        total: rows.iter().map(|r| r.count).sum(),
        rows,
    })
}

/// The assembled network and its parameters.
#[derive(Debug, Clone)]
pub struct KaiModel<T: Scalar> {
    config: ModelConfig,
    params: ParamSet<T>,
    stem: Stem,
    stages: Vec<Vec<KaiBlock>>,
    scales: Vec<DepthScale>,
    head: Head,
}

impl<T: Scalar> KaiModel<T> {
    /// Build with seeded initialisation: truncated-normal weights, zero
    /// biases, unit layer-norm gains.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            params: &mut params,
            rng: &mut rng,
        };
        let mode = config.block.padding_mode;
        let stem = Stem::new(&mut init, config.in_channels, config.dims[0], mode)?;
        let mut stages = Vec::with_capacity(NUM_STAGES);
        let mut scales = Vec::with_capacity(NUM_STAGES - 1);
        for s in 0..NUM_STAGES {
            let bc = config.block_config(s);
            let blocks = (0..config.depths[s])
                .map(|b| {
                    KaiBlock::new(
                        &mut init,
                        &format!("stages.{s}.blocks.{b}"),
                        &bc,
                        &config.mixer,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(blocks);
            if s + 1 < NUM_STAGES {
                scales.push(DepthScale::new(
                    &mut init,
                    &format!("scales.{s}"),
                    config.dims[s],
                    config.dims[s + 1],
                    !config.scale_invariant,
                )?);
            }
        }
        let head = Head::new(
            &mut init,
            config.dims[NUM_STAGES - 1],
            config.out_channels,
            mode,
        )?;
        Ok(Self {
            config,
            params,
            stem,
            stages,
            scales,
            head,
        })
    }

    /// Attach externally supplied parameters, checking names and shapes
    /// against the layout the configuration implies.
    pub fn from_params(config: ModelConfig, params: ParamSet<T>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        for (want, got) in model.params.iter().zip(params.iter()) {
            if want.name != got.name {
                return Err(Error::Config(format!(
                    "parameter `{}` found where `{}` was expected",
                    got.name, want.name
                )));
            }
            if want.value.shape() != got.value.shape() {
                return Err(Error::ParamShape {
                    name: got.name.clone(),
                    expected: want.value.shape().to_vec(),
                    found: got.value.shape().to_vec(),
                });
            }
        }
        if model.params.len() != params.len() {
            return Err(Error::Config(format!(
                "configuration implies {} parameters, {} supplied",
                model.params.len(),
                params.len()
            )));
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> KaiModel<U> {
        KaiModel {
            config: self.config.clone(),
            params: self.params.cast(),
            stem: self.stem.clone(),
            stages: self.stages.clone(),
            scales: self.scales.clone(),
            head: self.head.clone(),
        }
    }

    pub fn stem(&self) -> &Stem {
        &self.stem
    }

    pub fn blocks(&self, stage: usize) -> &[KaiBlock] {
        &self.stages[stage]
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    /// Differentiable forward pass against bound parameters.
    pub fn forward_graph(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        let expected = [
            self.config.in_channels,
            self.config.grid.height,
            self.config.grid.width,
        ];
        if x.shape() != expected {
            return Err(Error::shape(
                "forward",
                format!(
                    "input {:?} does not match configured {expected:?}",
                    x.shape()
                ),
            ));
        }
        let mut y = self.stem.forward(p, x).map_err(|e| e.in_layer("stem"))?;
        for (s, blocks) in self.stages.iter().enumerate() {
            for (b, block) in blocks.iter().enumerate() {
                y = block
                    .forward(p, &y)
                    .map_err(|e| e.in_layer(&format!("stages.{s}.blocks.{b}")))?;
            }
            if let Some(scale) = self.scales.get(s) {
                y = scale
                    .forward(p, &y)
                    .map_err(|e| e.in_layer(&format!("scales.{s}")))?;
            }
        }
        if !self.config.scale_invariant {
            y = tensor::upsample_bilinear(&y, self.config.grid.height, self.config.grid.width)
                .map_err(|e| e.in_layer("upsample"))?;
        }
        self.head.forward(p, &y).map_err(|e| e.in_layer("head"))
    }

    /// Inference: no graph is retained.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let p = self.params.bind(false);
        let y = self.forward_graph(&p, &Var::constant(x.clone()))?;
        Ok(y.value().clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_count_in_expected_range() {
        let pc = param_count(&ModelConfig::paper()).unwrap();
        assert!((6_000_000..=8_500_000).contains(&pc.total), "{}", pc.total);
    }

    #[test]
    fn registry_matches_closed_form() {
        for mixer in [
            ChannelMixer::PointwiseConv,
            ChannelMixer::ConvMlp,
            ChannelMixer::Mlp,
        ] {
            let mut cfg = ModelConfig::desk(5, 8, 16);
            cfg.block.channel_mixer = mixer;
            let m = KaiModel::<f32>::new(cfg.clone(), 3).unwrap();
            assert_eq!(m.params().num_scalars(), param_count(&cfg).unwrap().total);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::desk(5, 8, 15);
        assert!(c.validate().is_err());
        c.block.padding_mode = PaddingMode::Zero;
        assert!(c.validate().is_ok());
        let mut c = ModelConfig::desk(5, 8, 16);
        c.dims = [16, 8, 32, 48];
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk(5, 4, 16);
        assert!(c.validate().is_err(), "band kernel reach exceeds 4 rows");
        c.mixer.band_kernel = 7;
        assert!(c.validate().is_ok());
        let mut c = ModelConfig::desk(5, 8, 16);
        c.scale_invariant = false;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_defaults_to_full_size() {
        let c: ModelConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, ModelConfig::paper());
        let c: ModelConfig =
            serde_json::from_str(r#"{"block": {"channel_mixer": "conv_mlp"}}"#).unwrap();
        assert_eq!(c.block.channel_mixer, ChannelMixer::ConvMlp);
        assert!(serde_json::from_str::<ModelConfig>(r#"{"depth": [1,1,1,1]}"#).is_err());
    }
}
