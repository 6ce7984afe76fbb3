use serde::{Deserialize, Serialize};

use super::GridField;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-channel z-score statistics in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub channels: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Mean and population standard deviation over every field and grid cell.
    /// Accumulates in f64 with a two-pass algorithm.
    pub fn compute(fields: &[GridField]) -> Result<Self> {
        let first = fields.first().ok_or_else(|| {
            Error::Data("cannot compute normalization statistics from an empty split".into())
        })?;
        let c = first.num_channels();
        let per_channel = (first.height() * first.width() * fields.len()) as f64;
        let mut mean = vec![0.0; c];
        for f in fields {
            for (ch, m) in mean.iter_mut().enumerate() {
                *m += f.plane(ch).iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= per_channel);
        let mut var = vec![0.0; c];
        for f in fields {
            for (ch, v) in var.iter_mut().enumerate() {
                *v += f
                    .plane(ch)
                    .iter()
                    .map(|&x| (x as f64 - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        let mut std = Vec::with_capacity(c);
        for (ch, v) in var.into_iter().enumerate() {
            let s = (v / per_channel).sqrt();
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::ZeroVariance {
                    what: format!("channel `{}`", first.channels[ch].name),
                });
            }
            std.push(s);
        }
        Ok(Self {
            channels: first.channels.iter().map(|c| c.name.clone()).collect(),
            mean,
            std,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, shape: &[usize], op: &'static str) -> Result<usize> {
        if shape.len() != 3 || shape[0] != self.num_channels() {
            return Err(Error::shape(
                op,
                format!(
                    "tensor {shape:?} against {} normalized channels",
                    self.num_channels()
                ),
            ));
        }
        Ok(shape[1] * shape[2])
    }

    /// `(x - mean) / std` per channel.
    pub fn normalize<T: Scalar>(&self, x: &Tensor<f32>) -> Result<Tensor<T>> {
        let hw = self.check(x.shape(), "normalize")?;
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = i / hw;
                T::from_f64_lossy((v as f64 - self.mean[c]) / self.std[c])
            })
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    pub fn denormalize<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<f32>> {
        let hw = self.check(x.shape(), "denormalize")?;
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = i / hw;
                (v.to_f64_lossy() * self.std[c] + self.mean[c]) as f32
            })
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("channel,mean,std\n");
        for ((name, m), s) in self.channels.iter().zip(&self.mean).zip(&self.std) {
            out.push_str(&format!("{name},{m:e},{s:e}\n"));
        }
        out
    }
}
