//! Synthetic stand-in for reanalysis data: zonally advecting smooth waves
//! with exactly known dynamics.
//!
//! Channel 0 (`adv_unit`) moves one grid cell east per day with no noise, so
//! day `t + 1` is exactly `roll_lon(day t, 1)`. Middle channels superpose a
//! few waves with distinct integer speeds and wavenumbers plus seeded noise.
//! The last channel is a static orography-like field.

use std::f64::consts::PI;

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ChannelInfo, Dataset, GridField, LatLonGrid};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const SPEEDS: [i64; 6] = [2, -1, 1, -2, 3, 1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub days: usize,
    pub height: usize,
    pub width: usize,
    pub n_channels: usize,
    /// Noise standard deviation relative to each wave channel's amplitude.
    pub noise: f64,
    pub start_date: NaiveDate,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            days: 64,
            height: 8,
            width: 16,
            n_channels: 5,
            noise: 0.01,
            start_date: NaiveDate::from_ymd_opt(2000, 1, 1).unwrap(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.days < 2 {
            return Err(Error::Config(format!(
                "synthetic data needs at least 2 days, got {}",
                self.days
            )));
        }
        if self.height < 2 || self.width < 4 || !self.width.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "degenerate synthetic grid {}x{}: need height >= 2 and even width >= 4",
                self.height, self.width
            )));
        }
        if self.n_channels < 2 {
            return Err(Error::Config(
                "synthetic data needs at least 2 channels".into(),
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!(
                "noise must be finite and non-negative, got {}",
                self.noise
            )));
        }
        Ok(())
    }

    pub fn channels(&self) -> Vec<ChannelInfo> {
        let mut out = vec![ChannelInfo::new("adv_unit", "1")];
        for k in 1..self.n_channels - 1 {
            out.push(ChannelInfo::new(format!("wave{k}"), "1"));
        }
        out.push(ChannelInfo {
            is_static: true,
            ..ChannelInfo::new("orography", "m")
        });
        out
    }
}

/// A travelling zonal wave `amp * env(lat) * cos(2 pi m (j - s t) / W + phase)`.
struct Wave {
    amp: f64,
    m: f64,
    phase: f64,
    lat_k: f64,
    lat_phase: f64,
}

impl Wave {
    fn random(rng: &mut ChaCha8Rng, m: usize) -> Self {
        Self {
            amp: rng.gen_range(0.5..1.0),
            m: m as f64,
            phase: rng.gen_range(0.0..2.0 * PI),
            lat_k: rng.gen_range(1..=2) as f64,
            lat_phase: rng.gen_range(0.0..2.0 * PI),
        }
    }

    fn eval(&self, lat: f64, x: f64, width: f64) -> f64 {
        let env = 0.6 + 0.4 * (self.lat_k * lat.to_radians() + self.lat_phase).sin();
        self.amp * env * (2.0 * PI * self.m * x / width + self.phase).cos()
    }
}

struct WaveChannel {
    offset: f64,
    scale: f64,
    speed: i64,
    waves: Vec<Wave>,
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let grid = LatLonGrid::regular(h, w);
    let channels = cfg.channels();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let max_m = (w / 2).max(1);

    let adv: Vec<Wave> = (1..=3.min(max_m))
        .map(|m| Wave::random(&mut rng, m))
        .collect();
    let base: Vec<f64> = (0..h * w)
        .map(|idx| {
            let (i, j) = (idx / w, idx % w);
            adv.iter()
                .map(|wv| wv.eval(grid.lat[i], j as f64, w as f64))
                .sum()
        })
        .collect();

    let wave_channels: Vec<WaveChannel> = (1..cfg.n_channels - 1)
        .map(|k| WaveChannel {
            offset: 10.0 * k as f64,
            scale: 1.0 + k as f64,
            speed: SPEEDS[(k - 1) % SPEEDS.len()],
            waves: (0..2)
                .map(|n| Wave::random(&mut rng, 1 + (k + n) % max_m))
                .collect(),
        })
        .collect();

    let orography: Vec<f64> = {
        let modes: Vec<(f64, f64, f64, f64)> = (0..4)
            .map(|_| {
                (
                    rng.gen_range(1..=3) as f64,
                    rng.gen_range(1..=max_m.min(4)) as f64,
                    rng.gen_range(0.0..2.0 * PI),
                    rng.gen_range(0.0..2.0 * PI),
                )
            })
            .collect();
        (0..h * w)
            .map(|idx| {
                let (i, j) = (idx / w, idx % w);
                let lat = grid.lat[i].to_radians();
                let lon = 2.0 * PI * j as f64 / w as f64;
                let s: f64 = modes
                    .iter()
                    .map(|&(a, b, p, q)| (a * lat + p).cos() * (b * lon + q).cos())
                    .sum();
                1000.0 + 500.0 * s
            })
            .collect()
    };

    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let hw = h * w;
    let c = cfg.n_channels;
    let mut fields = Vec::with_capacity(cfg.days);
    for t in 0..cfg.days {
        let mut data = vec![0f32; c * hw];
        for (dst, src) in data[..hw].chunks_mut(w).zip(base.chunks(w)) {
            let shift = t % w;
            for j in 0..w {
                dst[(j + shift) % w] = src[j] as f32;
            }
        }
        for (k, ch) in wave_channels.iter().enumerate() {
            let plane = &mut data[(k + 1) * hw..(k + 2) * hw];
            for (idx, v) in plane.iter_mut().enumerate() {
                let (i, j) = (idx / w, idx % w);
                let x = j as f64 - (ch.speed * t as i64) as f64;
                let signal: f64 = ch
                    .waves
                    .iter()
                    .map(|wv| wv.eval(grid.lat[i], x, w as f64))
                    .sum();
                let eps = cfg.noise * noise.sample(&mut rng);
                *v = (ch.offset + ch.scale * (signal + eps)) as f32;
            }
        }
        for (v, &o) in data[(c - 1) * hw..].iter_mut().zip(&orography) {
            *v = o as f32;
        }
        let date = cfg
            .start_date
            .checked_add_days(Days::new(t as u64))
            .ok_or_else(|| Error::Config("date overflow".into()))?;
        let tensor = Tensor::new(vec![c, h, w], data)?;
        fields.push(GridField::new(
            tensor,
            date,
            channels.clone(),
            grid.clone(),
        )?);
    }
    Dataset::new(fields)
}
