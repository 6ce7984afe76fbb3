//! Binary PPM rendering of a single channel with a min/max sidecar.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::GridField;
use crate::error::{Error, Result};
use crate::io_util;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMeta {
    pub channel: String,
    pub units: String,
    pub date: chrono::NaiveDate,
    pub width: usize,
    pub height: usize,
    pub min: f64,
    pub max: f64,
}

/// Blue-white-red ramp over `t` in [0, 1].
fn colour(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let (r, g, b) = if t < 0.5 {
        let u = t / 0.5;
        (u, u, 1.0)
    } else {
        let u = (t - 0.5) / 0.5;
        (1.0, 1.0 - u, 1.0 - u)
    };
    [r, g, b].map(|c| (c * 255.0).round() as u8)
}

/// PPM (P6) bytes, one pixel per grid cell, north at the top.
pub fn heatmap_bytes(field: &GridField, channel: usize) -> Result<(Vec<u8>, HeatmapMeta)> {
    if channel >= field.num_channels() {
        return Err(Error::Data(format!(
            "channel {channel} out of range for a {}-channel field",
            field.num_channels()
        )));
    }
    let plane = field.plane(channel);
    let min = plane.iter().fold(f32::INFINITY, |a, &b| a.min(b)) as f64;
    let max = plane.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    let span = max - min;
    let (w, h) = (field.width(), field.height());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for &v in plane {
        let t = if span > 0.0 {
            (v as f64 - min) / span
        } else {
            0.5
        };
        out.extend_from_slice(&colour(t));
    }
    let info = &field.channels[channel];
    let meta = HeatmapMeta {
        channel: info.name.clone(),
        units: info.units.clone(),
        date: field.date,
        width: w,
        height: h,
        min,
        max,
    };
    Ok((out, meta))
}

/// Sidecar location: the image path with `.json` appended.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn render_heatmap(field: &GridField, channel: usize, path: &Path) -> Result<HeatmapMeta> {
    let (bytes, meta) = heatmap_bytes(field, channel)?;
    io_util::write_atomic(path, &bytes)?;
    io_util::write_atomic(&sidecar_path(path), &serde_json::to_vec_pretty(&meta)?)?;
    Ok(meta)
}
