//! Convolutional global weather emulator on a regular latitude–longitude grid.
//!
//! The crate bundles a small reverse-mode tensor engine, geocyclic padding,
//! the InceptionNeXt-style network, latitude-weighted skill metrics, data
//! formats with a synthetic generator, a training loop, and autoregressive
//! rollout with evaluation and ablation tooling.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablate;
pub mod blocks;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod heatmap;
pub mod io_util;
pub mod metrics;
pub mod model;
pub mod padding;
pub mod rollout;
pub mod tensor;
pub mod training;

pub use error::{Error, ErrorCategory, Result};
