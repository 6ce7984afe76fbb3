use std::fs;
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{read_grid, write_grid, GridField};
use crate::error::{Error, Result};
use crate::io_util;

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;
pub const DEFAULT_VAL_FRACTION: f64 = 0.15;
const MANIFEST: &str = "dataset.json";
const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Index boundaries: train `[0, train_end)`, validation `[train_end, val_end)`,
/// test `[val_end, len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBounds {
    pub train_end: usize,
    pub val_end: usize,
}

/// Ordered daily sequence of fields sharing one channel table and grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    fields: Vec<GridField>,
    bounds: SplitBounds,
}

impl Dataset {
    /// Validates contiguity and metadata, then splits by the default fractions.
    pub fn new(fields: Vec<GridField>) -> Result<Self> {
        Self::with_fractions(fields, DEFAULT_TRAIN_FRACTION, DEFAULT_VAL_FRACTION)
    }

    pub fn with_fractions(fields: Vec<GridField>, train: f64, val: f64) -> Result<Self> {
        if !(train > 0.0 && val >= 0.0 && train + val <= 1.0) {
            return Err(Error::Config(format!(
                "split fractions train={train} val={val} must satisfy 0 < train, 0 <= val, train + val <= 1"
            )));
        }
        let n = fields.len();
        let train_end = ((n as f64 * train).round() as usize).clamp(1, n);
        let val_end = (train_end + (n as f64 * val).round() as usize).min(n);
        Self::with_bounds(fields, SplitBounds { train_end, val_end })
    }

    /// Validation starts at `val_start`, test at `test_start`.
    pub fn with_split_dates(
        fields: Vec<GridField>,
        val_start: NaiveDate,
        test_start: NaiveDate,
    ) -> Result<Self> {
        if test_start < val_start {
            return Err(Error::Config(format!(
                "test start {test_start} precedes validation start {val_start}"
            )));
        }
        let index_of = |d: NaiveDate| fields.iter().take_while(|f| f.date < d).count();
        let bounds = SplitBounds {
            train_end: index_of(val_start),
            val_end: index_of(test_start),
        };
        Self::with_bounds(fields, bounds)
    }

    pub fn with_bounds(fields: Vec<GridField>, bounds: SplitBounds) -> Result<Self> {
        validate_sequence(&fields)?;
        if bounds.train_end > bounds.val_end || bounds.val_end > fields.len() {
            return Err(Error::Config(format!(
                "split bounds {bounds:?} invalid for {} days",
                fields.len()
            )));
        }
        Ok(Self { fields, bounds })
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn fields(&self) -> &[GridField] {
        &self.fields
    }

    pub fn bounds(&self) -> SplitBounds {
        self.bounds
    }

    pub fn first(&self) -> &GridField {
        &self.fields[0]
    }

    pub fn range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => 0..self.bounds.train_end,
            Split::Val => self.bounds.train_end..self.bounds.val_end,
            Split::Test => self.bounds.val_end..self.fields.len(),
        }
    }

    pub fn split(&self, split: Split) -> &[GridField] {
        &self.fields[self.range(split)]
    }

    /// Indices `t` such that `t` and `t + 1` both lie in the split.
    pub fn pairs(&self, split: Split) -> Vec<usize> {
        let r = self.range(split);
        (r.start..r.end.saturating_sub(1)).collect()
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let start = self.fields.first()?.date;
        let offset = (date - start).num_days();
        usize::try_from(offset)
            .ok()
            .filter(|&i| i < self.fields.len())
    }

    pub fn field_at(&self, date: NaiveDate) -> Option<&GridField> {
        self.index_of(date).map(|i| &self.fields[i])
    }

    /// Write one KAIGRID1 file per day plus a `dataset.json` manifest.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::with_capacity(self.fields.len());
        for f in &self.fields {
            let name = format!("{}.kaigrid", f.date);
            write_grid(&dir.join(&name), f)?;
            files.push(name);
        }
        let manifest = DatasetManifest {
            format_version: DATASET_FORMAT_VERSION,
            split: self.bounds,
            files,
        };
        io_util::write_atomic(&dir.join(MANIFEST), &serde_json::to_vec_pretty(&manifest)?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let manifest: DatasetManifest = serde_json::from_slice(&io_util::read_file(&path)?)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if manifest.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::Version {
                path,
                found: manifest.format_version,
                supported: DATASET_FORMAT_VERSION,
            });
        }
        let fields = manifest
            .files
            .iter()
            .map(|name| read_grid(&dir.join(name)))
            .collect::<Result<Vec<_>>>()?;
        Self::with_bounds(fields, manifest.split)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    format_version: u32,
    split: SplitBounds,
    files: Vec<String>,
}

fn validate_sequence(fields: &[GridField]) -> Result<()> {
    let first = fields
        .first()
        .ok_or_else(|| Error::Data("dataset contains no fields".into()))?;
    for f in &fields[1..] {
        if f.channels != first.channels {
            return Err(Error::Data(format!("channel table differs on {}", f.date)));
        }
        if f.grid != first.grid {
            return Err(Error::Data(format!("grid differs on {}", f.date)));
        }
    }
    let gaps = date_gaps(fields.iter().map(|f| f.date));
    if !gaps.is_empty() {
        return Err(Error::Data(format!(
            "dates are not contiguous daily steps: {}",
            gaps.join(", ")
        )));
    }
    Ok(())
}

/// Human-readable descriptions of every step that is not exactly one day.
pub fn date_gaps(dates: impl IntoIterator<Item = NaiveDate>) -> Vec<String> {
    let dates: Vec<_> = dates.into_iter().collect();
    dates
        .windows(2)
        .filter(|w| (w[1] - w[0]).num_days() != 1)
        .map(|w| format!("{} -> {}", w[0], w[1]))
        .collect()
}
