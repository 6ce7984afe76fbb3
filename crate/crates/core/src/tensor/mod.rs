//! Dense tensors with reverse-mode differentiation, restricted to the
//! operations the forecasting network needs.

mod array;
pub mod gradcheck;
pub mod ops;
mod param;
mod scalar;
mod var;

pub use array::Tensor;
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, ParamCheck};
pub use ops::{
    add, channels_first, channels_last, concat_channels, conv2d, decimate2, gelu, layer_norm,
    leaky_relu, linear, mul, pad, scale, split_channels, sub, sum, upsample_bilinear, weighted_mse,
    LAYER_NORM_EPS,
};
pub use param::{Bound, ParamId, ParamSet, Parameter};
pub use scalar::Scalar;
pub use var::Var;
