//! Forecast verification against a truth dataset, with persistence and
//! climatology baselines reported alongside.

use crate::data::{Dataset, GridField, Split};
use crate::error::{Error, Result};
use crate::metrics::{
    acc_channel, add_days, lat_weights, pattern_correlation, persistence_baseline, weighted_rmse,
    AnomalyMode, Climatology, MetricReport, MetricRow, Region,
};
use crate::rollout::ForecastRun;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccMode {
    #[default]
    SpatialMeanRemoved,
    ClimatologyAnomaly,
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub acc_mode: AccMode,
    /// Adds a pattern-correlation column for this region.
    pub region: Option<Region>,
}

/// Per-variable, per-lead metrics for `runs` plus both baselines. The
/// climatology comes from the truth dataset's training split.
pub fn evaluate(runs: &[ForecastRun], truth: &Dataset, opts: &EvalOptions) -> Result<MetricReport> {
    let first = runs
        .first()
        .ok_or_else(|| Error::Data("no forecasts to evaluate".into()))?;
    let leads = first.lead_days.clone();
    if runs.iter().any(|r| r.lead_days != leads) {
        return Err(Error::Data(
            "all forecast runs must share the same leads".into(),
        ));
    }
    let w = lat_weights(&truth.first().grid.lat)?;
    let climatology = Climatology::from_fields(truth.split(Split::Train))?;
    let mode = match opts.acc_mode {
        AccMode::SpatialMeanRemoved => AnomalyMode::SpatialMeanRemoved,
        AccMode::ClimatologyAnomaly => AnomalyMode::ClimatologyAnomaly(&climatology),
    };

    let lookup = |date| {
        truth
            .field_at(date)
            .ok_or_else(|| Error::Data(format!("truth has no field for {date}")))
    };
    let mut missing = Vec::new();
    for r in runs {
        for &l in std::iter::once(&0).chain(&leads) {
            let d = add_days(r.init_date, l)?;
            if truth.field_at(d).is_none() {
                missing.push(d.to_string());
            }
        }
    }
    if !missing.is_empty() {
        missing.dedup();
        return Err(Error::Data(format!(
            "truth is missing dates: {}",
            missing.join(", ")
        )));
    }

    let names: Vec<String> = truth
        .first()
        .channels
        .iter()
        .map(|c| c.name.clone())
        .collect();
    let mut rows = Vec::new();
    for &lead in &leads {
        let mut fc = Vec::with_capacity(runs.len());
        let mut persist = Vec::with_capacity(runs.len());
        let mut clim = Vec::with_capacity(runs.len());
        let mut obs = Vec::with_capacity(runs.len());
        for r in runs {
            let f = r.field_at_lead(lead).expect("lead listed in run").clone();
            let y = lookup(f.date)?.clone();
            let init = lookup(r.init_date)?;
            persist.extend(persistence_baseline(init, &[lead])?);
            clim.push(climatology.field_at(init, y.date)?);
            fc.push(f);
            obs.push(y);
        }
        for (source, series) in [
            ("model", &fc),
            ("persistence", &persist),
            ("climatology", &clim),
        ] {
            rows.extend(score(
                source,
                lead,
                series,
                &obs,
                &w,
                mode,
                opts.region.as_ref(),
                &names,
            )?);
        }
    }
    Ok(MetricReport {
        acc_mode: mode.name().to_string(),
        rows,
    })
}

#[allow(clippy::too_many_arguments)]
fn score(
    source: &str,
    lead: u32,
    forecast: &[GridField],
    truth: &[GridField],
    w: &crate::metrics::LatWeights,
    mode: AnomalyMode<'_>,
    region: Option<&Region>,
    names: &[String],
) -> Result<Vec<MetricRow>> {
    let rmse = weighted_rmse(forecast, truth, w)?;
    // Climatology anomalies of the climatology forecast are identically zero.
    let accs = match (source, mode) {
        ("climatology", AnomalyMode::ClimatologyAnomaly(_)) => vec![None; names.len()],
        _ => acc_or_undefined(forecast, truth, w, mode)?,
    };
    let mut rows = Vec::with_capacity(names.len());
    for (c, name) in names.iter().enumerate() {
        let pattern_corr = match region {
            Some(r) => {
                let mut s = 0.0;
                for (f, y) in forecast.iter().zip(truth) {
                    s += pattern_correlation(f, y, c, r, w).unwrap_or(f64::NAN);
                }
                Some(s / forecast.len() as f64)
            }
            None => None,
        };
        rows.push(MetricRow {
            source: source.to_string(),
            variable: name.clone(),
            lead,
            rmse: rmse[c],
            acc: accs[c],
            pattern_corr,
            count: forecast.len(),
        });
    }
    Ok(rows)
}

/// ACC per variable; a variable whose fields have no spatial anomaly variance
/// (a static channel, or a constant baseline) yields `None` instead of failing.
fn acc_or_undefined(
    forecast: &[GridField],
    truth: &[GridField],
    w: &crate::metrics::LatWeights,
    mode: AnomalyMode<'_>,
) -> Result<Vec<Option<f64>>> {
    (0..forecast[0].num_channels())
        .map(|c| match acc_channel(forecast, truth, w, mode, c) {
            Ok(v) => Ok(Some(v)),
            Err(Error::ZeroVariance { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}
