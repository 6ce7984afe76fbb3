//! Padding for convolutions on a global latitude–longitude grid.
//!
//! Geocyclic padding wraps longitude columns circularly and fills rows beyond
//! a pole by reflecting across it with a half-revolution longitude shift: the
//! `r`-th ghost row above the first grid row at longitude `j` is grid row
//! `r - 1` at longitude `(j + W/2) mod W`, and symmetrically at the last row.
//! Corner cells apply the pole rule first and then the circular wrap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingMode {
    Zero,
    Geocyclic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PaddingSpec {
    pub mode: PaddingMode,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl PaddingSpec {
    pub fn new(mode: PaddingMode, pad_h: usize, pad_w: usize) -> Self {
        Self { mode, pad_h, pad_w }
    }

    pub fn none() -> Self {
        Self::new(PaddingMode::Zero, 0, 0)
    }

    /// "Same" padding for an odd `kh x kw` kernel.
    pub fn same(mode: PaddingMode, kh: usize, kw: usize) -> Result<Self> {
        if kh.is_multiple_of(2) || kw.is_multiple_of(2) {
            return Err(Error::shape(
                "pad",
                format!("even kernel {kh}x{kw} is unsupported"),
            ));
        }
        Ok(Self::new(mode, (kh - 1) / 2, (kw - 1) / 2))
    }

    pub fn is_identity(&self) -> bool {
        self.pad_h == 0 && self.pad_w == 0
    }

    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        if self.pad_h > h || self.pad_w > w {
            return Err(Error::shape(
                "pad",
                format!(
                    "padding ({}, {}) exceeds grid extent ({h}, {w})",
                    self.pad_h, self.pad_w
                ),
            ));
        }
        if self.mode == PaddingMode::Geocyclic && self.pad_h > 0 && !w.is_multiple_of(2) {
            return Err(Error::shape(
                "pad",
                format!("geocyclic pole padding needs an even longitude count, got {w}"),
            ));
        }
        Ok(())
    }
}

/// Source index (into one `H x W` plane) for every cell of the padded plane,
/// or `None` where the cell is zero-filled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PadMap {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub source: Vec<Option<u32>>,
}

impl PadMap {
    pub fn build(h: usize, w: usize, spec: PaddingSpec) -> Result<Self> {
        spec.validate(h, w)?;
        let (ph, pw) = (spec.pad_h as isize, spec.pad_w as isize);
        let (hi, wi) = (h as isize, w as isize);
        let out_h = h + 2 * spec.pad_h;
        let out_w = w + 2 * spec.pad_w;
        let mut source = Vec::with_capacity(out_h * out_w);
        for pr in 0..out_h as isize {
            for pc in 0..out_w as isize {
                let mut r = pr - ph;
                let mut c = pc - pw;
                let cell = match spec.mode {
                    PaddingMode::Zero => {
                        if (0..hi).contains(&r) && (0..wi).contains(&c) {
                            Some(r * wi + c)
                        } else {
                            None
                        }
                    }
                    PaddingMode::Geocyclic => {
                        if r < 0 {
                            r = -r - 1;
                            c += wi / 2;
                        } else if r >= hi {
                            r = 2 * hi - r - 1;
                            c += wi / 2;
                        }
                        Some(r * wi + c.rem_euclid(wi))
                    }
                };
                source.push(cell.map(|i| i as u32));
            }
        }
        Ok(Self {
            in_h: h,
            in_w: w,
            out_h,
            out_w,
            source,
        })
    }

    /// Gather every channel plane of a `[C, H, W]` buffer into the padded layout.
    pub fn gather<T: Copy + Default>(&self, input: &[T], channels: usize) -> Vec<T> {
        let plane_in = self.in_h * self.in_w;
        let plane_out = self.out_h * self.out_w;
        let mut out = vec![T::default(); channels * plane_out];
        for (src, dst) in input.chunks(plane_in).zip(out.chunks_mut(plane_out)) {
            for (d, s) in dst.iter_mut().zip(&self.source) {
                if let Some(i) = s {
                    *d = src[*i as usize];
                }
            }
        }
        out
    }

    /// Adjoint of [`PadMap::gather`]: scatter-add padded gradients onto sources.
    pub fn scatter_add<T: Copy + std::ops::AddAssign>(
        &self,
        grad_out: &[T],
        grad_in: &mut [T],
        channels: usize,
    ) {
        let plane_in = self.in_h * self.in_w;
        let plane_out = self.out_h * self.out_w;
        for (g, acc) in grad_out
            .chunks(plane_out)
            .zip(grad_in.chunks_mut(plane_in))
            .take(channels)
        {
            for (v, s) in g.iter().zip(&self.source) {
                if let Some(i) = s {
                    acc[*i as usize] += *v;
                }
            }
        }
    }
}
