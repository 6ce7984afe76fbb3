//! Autoregressive multi-day forecasts.

use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{read_grid, write_grid, Dataset, GridField, NormStats};
use crate::error::{Error, Result};
use crate::io_util;
use crate::metrics::add_days;
use crate::model::{KaiModel, ModelConfig};
use crate::tensor::Scalar;

/// Where a forecast came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Hex SHA-256 of the checkpoint file, when the model was loaded from one.
    pub checkpoint_sha256: Option<String>,
    pub config: ModelConfig,
    pub precision: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRun {
    pub init_date: NaiveDate,
    pub lead_days: Vec<u32>,
    /// Denormalized prediction per lead, dated at its valid time.
    pub fields: Vec<GridField>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct RunManifest {
    init_date: NaiveDate,
    lead_days: Vec<u32>,
    files: Vec<String>,
    provenance: Provenance,
}

const RUN_MANIFEST: &str = "run.json";

impl ForecastRun {
    pub fn field_at_lead(&self, lead: u32) -> Option<&GridField> {
        self.lead_days
            .iter()
            .position(|&l| l == lead)
            .map(|i| &self.fields[i])
    }

    /// One KAIGRID1 file per lead plus a `run.json` manifest.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::new();
        for (lead, f) in self.lead_days.iter().zip(&self.fields) {
            let name = format!("lead{lead:03}.kaigrid");
            write_grid(&dir.join(&name), f)?;
            files.push(name);
        }
        let manifest = RunManifest {
            init_date: self.init_date,
            lead_days: self.lead_days.clone(),
            files,
            provenance: self.provenance.clone(),
        };
        io_util::write_atomic(
            &dir.join(RUN_MANIFEST),
            &serde_json::to_vec_pretty(&manifest)?,
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(RUN_MANIFEST);
        let m: RunManifest = serde_json::from_slice(&io_util::read_file(&path)?)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if m.files.len() != m.lead_days.len() {
            return Err(Error::Data(format!(
                "{}: lead and file counts differ",
                path.display()
            )));
        }
        let fields = m
            .files
            .iter()
            .map(|f| read_grid(&dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            init_date: m.init_date,
            lead_days: m.lead_days,
            fields,
            provenance: m.provenance,
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Forecast `n_days` ahead from `initial`, feeding each prediction back in.
/// Static channels are reset to their initial values after every step.
pub fn rollout<T: Scalar>(
    model: &KaiModel<T>,
    initial: &GridField,
    n_days: u32,
    stats: &NormStats,
    checkpoint_sha256: Option<String>,
) -> Result<ForecastRun> {
    if n_days == 0 {
        return Err(Error::Config(
            "rollout needs at least one forecast day".into(),
        ));
    }
    if stats
        .channels
        .iter()
        .ne(initial.channels.iter().map(|c| &c.name))
    {
        return Err(Error::Data(
            "normalization statistics do not match the initial field's channels".into(),
        ));
    }
    let hw = initial.height() * initial.width();
    let statics: Vec<usize> = (0..initial.num_channels())
        .filter(|&c| initial.channels[c].is_static)
        .collect();
    let x0 = stats.normalize::<T>(&initial.data)?;
    let mut x = x0.clone();
    let mut fields = Vec::with_capacity(n_days as usize);
    for step in 1..=n_days {
        let mut y = model.forward(&x).map_err(|e| match e {
            Error::NonFinite { .. } => Error::Numerical(format!("rollout step {step}: {e}")),
            other => other,
        })?;
        for &c in &statics {
            y.data_mut()[c * hw..(c + 1) * hw].copy_from_slice(&x0.data()[c * hw..(c + 1) * hw]);
        }
        let mut phys = stats.denormalize(&y)?;
        for &c in &statics {
            phys.data_mut()[c * hw..(c + 1) * hw].copy_from_slice(initial.plane(c));
        }
        if !phys.is_finite() {
            return Err(Error::Numerical(format!(
                "rollout step {step} produced non-finite values"
            )));
        }
        fields.push(initial.with_data(phys, add_days(initial.date, step)?)?);
        x = y;
    }
    Ok(ForecastRun {
        init_date: initial.date,
        lead_days: (1..=n_days).collect(),
        fields,
        provenance: Provenance {
            checkpoint_sha256,
            config: model.config().clone(),
            precision: T::NAME.to_string(),
        },
    })
}

/// Indices of initial days in `range` whose `n_days` verifying days all lie in the dataset.
pub fn init_indices(dataset: &Dataset, range: std::ops::Range<usize>, n_days: u32) -> Vec<usize> {
    range
        .filter(|&t| t + (n_days as usize) < dataset.len())
        .collect()
}
