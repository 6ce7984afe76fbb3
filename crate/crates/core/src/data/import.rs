use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{date_gaps, ChannelInfo, Dataset, GridField, LatLonGrid};
use crate::error::{Error, Result};
use crate::io_util;
use crate::tensor::Tensor;

/// Describes a raw little-endian f32 blob laid out as `[T, C, H, W]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawManifest {
    /// `[C, H, W]` of a single day.
    pub dims: [usize; 3],
    pub channels: Vec<ChannelInfo>,
    /// One date per day in the blob, in blob order.
    pub dates: Vec<NaiveDate>,
    /// Cell-centre latitudes; defaults to the regular grid.
    #[serde(default)]
    pub lat: Option<Vec<f64>>,
    #[serde(default)]
    pub lon: Option<Vec<f64>>,
    #[serde(default)]
    pub val_start: Option<NaiveDate>,
    #[serde(default)]
    pub test_start: Option<NaiveDate>,
}

pub fn import_raw(blob_path: &Path, manifest_path: &Path) -> Result<Dataset> {
    let manifest: RawManifest = serde_json::from_slice(&io_util::read_file(manifest_path)?)
        .map_err(|e| Error::Data(format!("{}: {e}", manifest_path.display())))?;
    import_raw_bytes(blob_path, &io_util::read_file(blob_path)?, &manifest)
}

pub fn import_raw_bytes(path: &Path, blob: &[u8], manifest: &RawManifest) -> Result<Dataset> {
    let [c, h, w] = manifest.dims;
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::Data(format!(
            "manifest dims {:?} must be positive",
            manifest.dims
        )));
    }
    if manifest.channels.len() != c {
        return Err(Error::Data(format!(
            "manifest lists {} channels for dims C={c}",
            manifest.channels.len()
        )));
    }
    if manifest.dates.is_empty() {
        return Err(Error::Data("manifest lists no dates".into()));
    }
    let gaps = date_gaps(manifest.dates.iter().copied());
    if !gaps.is_empty() {
        return Err(Error::Data(format!(
            "manifest dates are not contiguous: gaps at {}",
            gaps.join(", ")
        )));
    }
    let day_bytes = c * h * w * 4;
    let expected = day_bytes * manifest.dates.len();
    if blob.len() != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            what: "raw payload",
            expected,
            actual: blob.len(),
        });
    }
    let regular = LatLonGrid::regular(h, w);
    let grid = LatLonGrid {
        lat: manifest.lat.clone().unwrap_or(regular.lat),
        lon: manifest.lon.clone().unwrap_or(regular.lon),
    };
    let fields = manifest
        .dates
        .iter()
        .zip(blob.chunks_exact(day_bytes))
        .map(|(&date, bytes)| {
            let data = Tensor::new(vec![c, h, w], io_util::le_bytes_to_f32(bytes))?;
            GridField::new(data, date, manifest.channels.clone(), grid.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    match (manifest.val_start, manifest.test_start) {
        (Some(v), Some(t)) => Dataset::with_split_dates(fields, v, t),
        (None, None) => Dataset::new(fields),
        _ => Err(Error::Config(
            "val_start and test_start must be given together".into(),
        )),
    }
}
