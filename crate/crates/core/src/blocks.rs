//! Network building blocks: stem, four-branch inception token mixer,
//! inverted-residual block with selectable channel mixer, depth scaling and
//! output head.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::padding::{PaddingMode, PaddingSpec};
use crate::tensor::{self, Bound, ParamId, ParamSet, Scalar, Tensor, Var, LAYER_NORM_EPS};

/// Standard deviation of the truncated-normal weight initialiser.
pub const INIT_STD: f64 = 0.02;
/// Negative slope of the LeakyReLU ablation activation.
pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InceptionMixerConfig {
    pub square_kernel: usize,
    pub band_kernel: usize,
    /// Fraction of channels given to each of the three convolution branches.
    pub conv_branch_ratio: f64,
}

impl Default for InceptionMixerConfig {
    fn default() -> Self {
        Self {
            square_kernel: 3,
            band_kernel: 11,
            conv_branch_ratio: 0.125,
        }
    }
}

impl InceptionMixerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.square_kernel.is_multiple_of(2) || self.band_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "mixer kernels must be odd, got {} and {}",
                self.square_kernel, self.band_kernel
            )));
        }
        if !(self.conv_branch_ratio > 0.0 && 3.0 * self.conv_branch_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "conv_branch_ratio {} must lie in (0, 1/3]",
                self.conv_branch_ratio
            )));
        }
        Ok(())
    }

    /// Channel counts `[square, band 1xk, band kx1, identity]`: each conv
    /// branch gets `floor(C * ratio)`, the identity branch the remainder.
    pub fn branch_sizes(&self, channels: usize) -> Result<[usize; 4]> {
        self.validate()?;
        let g = (channels as f64 * self.conv_branch_ratio + 1e-9).floor() as usize;
        if g == 0 {
            return Err(Error::Config(format!(
                "{channels} channels leave no channel for the convolution branches at ratio {}",
                self.conv_branch_ratio
            )));
        }
        Ok([g, g, g, channels - 3 * g])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMixer {
    PointwiseConv,
    ConvMlp,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Gelu,
    LeakyRelu,
}

/// Settings shared by every block of the network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockSettings {
    pub mlp_ratio: f64,
    pub channel_mixer: ChannelMixer,
    pub activation: Activation,
    pub padding_mode: PaddingMode,
}

impl Default for BlockSettings {
    fn default() -> Self {
        Self {
            mlp_ratio: 4.0,
            channel_mixer: ChannelMixer::PointwiseConv,
            activation: Activation::Gelu,
            padding_mode: PaddingMode::Geocyclic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockConfig {
    pub channels: usize,
    pub settings: BlockSettings,
}

impl BlockConfig {
    pub fn hidden(&self) -> Result<usize> {
        let h = self.channels as f64 * self.settings.mlp_ratio;
        if self.channels == 0 || h < 1.0 || (h - h.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "mlp_ratio {} times {} channels is not a positive integer",
                self.settings.mlp_ratio, self.channels
            )));
        }
        Ok(h.round() as usize)
    }
}

// ---------------------------------------------------------------------------
// Parameter construction

/// Registers parameters under a dotted prefix with deterministic init.
pub(crate) struct Init<'a, T: Scalar> {
    pub params: &'a mut ParamSet<T>,
    pub rng: &'a mut ChaCha8Rng,
}

impl<T: Scalar> Init<'_, T> {
    /// Normal(0, INIT_STD) truncated at two standard deviations.
    pub fn trunc_normal(&mut self, name: String, shape: &[usize]) -> Result<ParamId> {
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break T::from_f64_lossy(z * INIT_STD);
            }
        });
        self.params.add(name, t)
    }

    pub fn zeros(&mut self, name: String, shape: &[usize]) -> Result<ParamId> {
        self.params.add(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: String, shape: &[usize]) -> Result<ParamId> {
        self.params.add(name, Tensor::full(shape, T::one()))
    }
}

fn activate<T: Scalar>(x: &Var<T>, act: Activation) -> Result<Var<T>> {
    match act {
        Activation::Gelu => tensor::gelu(x),
        Activation::LeakyRelu => tensor::leaky_relu(x, LEAKY_SLOPE),
    }
}

#[derive(Debug, Clone)]
pub struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

impl Norm {
    fn new<T: Scalar>(init: &mut Init<T>, prefix: &str, c: usize) -> Result<Self> {
        Ok(Self {
            gamma: init.ones(format!("{prefix}.gamma"), &[c])?,
            beta: init.zeros(format!("{prefix}.beta"), &[c])?,
        })
    }

    fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        tensor::layer_norm(x, p.get(self.gamma), p.get(self.beta), LAYER_NORM_EPS)
    }
}

/// Convolution weight with optional bias.
#[derive(Debug, Clone)]
pub struct Conv {
    weight: ParamId,
    bias: Option<ParamId>,
    groups: usize,
    kernel: (usize, usize),
}

impl Conv {
    fn new<T: Scalar>(
        init: &mut Init<T>,
        prefix: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        groups: usize,
        bias: bool,
    ) -> Result<Self> {
        let shape = [cout, cin / groups, kernel.0, kernel.1];
        let weight = init.trunc_normal(format!("{prefix}.weight"), &shape)?;
        let bias = if bias {
            Some(init.zeros(format!("{prefix}.bias"), &[cout])?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            groups,
            kernel,
        })
    }

    fn depthwise<T: Scalar>(
        init: &mut Init<T>,
        prefix: &str,
        c: usize,
        kernel: (usize, usize),
        bias: bool,
    ) -> Result<Self> {
        Self::new(init, prefix, c, c, kernel, c, bias)
    }

    fn pointwise<T: Scalar>(
        init: &mut Init<T>,
        prefix: &str,
        cin: usize,
        cout: usize,
    ) -> Result<Self> {
        Self::new(init, prefix, cin, cout, (1, 1), 1, true)
    }

    fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>, mode: PaddingMode) -> Result<Var<T>> {
        let spec = PaddingSpec::same(mode, self.kernel.0, self.kernel.1)?;
        tensor::conv2d(
            x,
            p.get(self.weight),
            self.bias.map(|b| p.get(b)),
            self.groups,
            spec,
        )
    }
}

// ---------------------------------------------------------------------------
// Stem

/// 3x3 depthwise conv, 1x1 projection to the first stage width, layer norm.
#[derive(Debug, Clone)]
pub struct Stem {
    in_channels: usize,
    dw: Conv,
    pw: Conv,
    norm: Norm,
    mode: PaddingMode,
}

impl Stem {
    pub(crate) fn new<T: Scalar>(
        init: &mut Init<T>,
        cin: usize,
        cout: usize,
        mode: PaddingMode,
    ) -> Result<Self> {
        Ok(Self {
            in_channels: cin,
            dw: Conv::depthwise(init, "stem.dw", cin, (3, 3), true)?,
            pw: Conv::pointwise(init, "stem.pw", cin, cout)?,
            norm: Norm::new(init, "stem.norm", cout)?,
            mode,
        })
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        let (c, _, _) = x.value().chw("stem")?;
        if c != self.in_channels {
            return Err(Error::shape(
                "stem",
                format!("expected {} input channels, got {c}", self.in_channels),
            ));
        }
        let y = self.dw.forward(p, x, self.mode)?;
        let y = self.pw.forward(p, &y, self.mode)?;
        self.norm.forward(p, &y)
    }
}

// ---------------------------------------------------------------------------
// Inception token mixer

#[derive(Debug, Clone)]
pub struct InceptionMixer {
    sizes: [usize; 4],
    square: Conv,
    band_w: Conv,
    band_h: Conv,
    mode: PaddingMode,
}

impl InceptionMixer {
    pub(crate) fn new<T: Scalar>(
        init: &mut Init<T>,
        prefix: &str,
        channels: usize,
        cfg: &InceptionMixerConfig,
        mode: PaddingMode,
    ) -> Result<Self> {
        let sizes = cfg.branch_sizes(channels)?;
        let g = sizes[0];
        let (sq, band) = (cfg.square_kernel, cfg.band_kernel);
        Ok(Self {
            sizes,
            square: Conv::depthwise(init, &format!("{prefix}.dw_square"), g, (sq, sq), false)?,
            band_w: Conv::depthwise(init, &format!("{prefix}.dw_band_w"), g, (1, band), false)?,
            band_h: Conv::depthwise(init, &format!("{prefix}.dw_band_h"), g, (band, 1), false)?,
            mode,
        })
    }

    pub fn branch_sizes(&self) -> [usize; 4] {
        self.sizes
    }

    /// Split channels into `{square, 1xk band, kx1 band, identity}` branches,
    /// convolve the first three depthwise and concatenate in that order.
    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        let parts: Vec<usize> = self.sizes.iter().copied().filter(|&n| n > 0).collect();
        let branches = tensor::split_channels(x, &parts)?;
        let mut out = vec![
            self.square.forward(p, &branches[0], self.mode)?,
            self.band_w.forward(p, &branches[1], self.mode)?,
            self.band_h.forward(p, &branches[2], self.mode)?,
        ];
        if let Some(identity) = branches.get(3) {
            out.push(identity.clone());
        }
        tensor::concat_channels(&out)
    }
}

// ---------------------------------------------------------------------------
// Channel mixers and the residual block

#[derive(Debug, Clone)]
enum MixerLayers {
    Pointwise {
        fc1: Conv,
        fc2: Conv,
    },
    ConvMlp {
        fc1: Conv,
        dw: Conv,
        fc2: Conv,
    },
    Mlp {
        fc1: (ParamId, ParamId),
        fc2: (ParamId, ParamId),
    },
}

#[derive(Debug, Clone)]
pub struct KaiBlock {
    token_mixer: InceptionMixer,
    norm: Norm,
    mixer: MixerLayers,
    activation: Activation,
    mode: PaddingMode,
}

impl KaiBlock {
    pub(crate) fn new<T: Scalar>(
        init: &mut Init<T>,
        prefix: &str,
        cfg: &BlockConfig,
        mixer_cfg: &InceptionMixerConfig,
    ) -> Result<Self> {
        let c = cfg.channels;
        let hidden = cfg.hidden()?;
        let mode = cfg.settings.padding_mode;
        let token_mixer =
            InceptionMixer::new(init, &format!("{prefix}.mixer"), c, mixer_cfg, mode)?;
        let norm = Norm::new(init, &format!("{prefix}.norm"), c)?;
        let mixer = match cfg.settings.channel_mixer {
            ChannelMixer::PointwiseConv => MixerLayers::Pointwise {
                fc1: Conv::pointwise(init, &format!("{prefix}.mlp.fc1"), c, hidden)?,
                fc2: Conv::pointwise(init, &format!("{prefix}.mlp.fc2"), hidden, c)?,
            },
            ChannelMixer::ConvMlp => MixerLayers::ConvMlp {
                fc1: Conv::pointwise(init, &format!("{prefix}.mlp.fc1"), c, hidden)?,
                dw: Conv::depthwise(init, &format!("{prefix}.mlp.dw"), hidden, (3, 3), true)?,
                fc2: Conv::pointwise(init, &format!("{prefix}.mlp.fc2"), hidden, c)?,
            },
            ChannelMixer::Mlp => MixerLayers::Mlp {
                fc1: (
                    init.trunc_normal(format!("{prefix}.mlp.fc1.weight"), &[hidden, c])?,
                    init.zeros(format!("{prefix}.mlp.fc1.bias"), &[hidden])?,
                ),
                fc2: (
                    init.trunc_normal(format!("{prefix}.mlp.fc2.weight"), &[c, hidden])?,
                    init.zeros(format!("{prefix}.mlp.fc2.bias"), &[c])?,
                ),
            },
        };
        Ok(Self {
            token_mixer,
            norm,
            mixer,
            activation: cfg.settings.activation,
            mode,
        })
    }

    pub fn token_mixer(&self) -> &InceptionMixer {
        &self.token_mixer
    }

    /// `x + channel_mixer(norm(token_mixer(x)))`.
    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        let y = self.token_mixer.forward(p, x)?;
        let y = self.norm.forward(p, &y)?;
        let y = match &self.mixer {
            MixerLayers::Pointwise { fc1, fc2 } => {
                let h = activate(&fc1.forward(p, &y, self.mode)?, self.activation)?;
                fc2.forward(p, &h, self.mode)?
            }
            MixerLayers::ConvMlp { fc1, dw, fc2 } => {
                let h = fc1.forward(p, &y, self.mode)?;
                let h = activate(&dw.forward(p, &h, self.mode)?, self.activation)?;
                fc2.forward(p, &h, self.mode)?
            }
            MixerLayers::Mlp { fc1, fc2 } => {
                let (_, hh, ww) = y.value().chw("mlp")?;
                let tokens = tensor::channels_last(&y)?;
                let h = tensor::linear(&tokens, p.get(fc1.0), Some(p.get(fc1.1)))?;
                let h = activate(&h, self.activation)?;
                let h = tensor::linear(&h, p.get(fc2.0), Some(p.get(fc2.1)))?;
                tensor::channels_first(&h, hh, ww)?
            }
        };
        tensor::add(x, &y)
    }
}

// ---------------------------------------------------------------------------
// Depth scaling and head

/// Layer norm followed by a 1x1 projection to a wider channel count. With
/// `downsample` the projection is strided (used only by the ablation that
/// removes scale invariance).
#[derive(Debug, Clone)]
pub struct DepthScale {
    norm: Norm,
    pw: Conv,
    downsample: bool,
}

impl DepthScale {
    pub(crate) fn new<T: Scalar>(
        init: &mut Init<T>,
        prefix: &str,
        cin: usize,
        cout: usize,
        downsample: bool,
    ) -> Result<Self> {
        if cout < cin {
            return Err(Error::Config(format!(
                "depth scaling must not shrink channels ({cin} -> {cout})"
            )));
        }
        Ok(Self {
            norm: Norm::new(init, &format!("{prefix}.norm"), cin)?,
            pw: Conv::pointwise(init, &format!("{prefix}.pw"), cin, cout)?,
            downsample,
        })
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        let y = self.norm.forward(p, x)?;
        let y = if self.downsample {
            tensor::decimate2(&y)?
        } else {
            y
        };
        self.pw.forward(p, &y, PaddingMode::Zero)
    }
}

/// 3x3 depthwise conv then a 1x1 projection to the output channels; no
/// output activation.
#[derive(Debug, Clone)]
pub struct Head {
    in_channels: usize,
    dw: Conv,
    pw: Conv,
    mode: PaddingMode,
}

impl Head {
    pub(crate) fn new<T: Scalar>(
        init: &mut Init<T>,
        cin: usize,
        cout: usize,
        mode: PaddingMode,
    ) -> Result<Self> {
        let dw = Conv::depthwise(init, "head.dw", cin, (3, 3), true)?;
        let pw = Conv::pointwise(init, "head.pw", cin, cout)?;
        Ok(Self {
            in_channels: cin,
            dw,
            pw,
            mode,
        })
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        let (c, _, _) = x.value().chw("head")?;
        if c != self.in_channels {
            return Err(Error::shape(
                "head",
                format!("expected {} channels, got {c}", self.in_channels),
            ));
        }
        let y = self.dw.forward(p, x, self.mode)?;
        self.pw.forward(p, &y, self.mode)
    }
}
