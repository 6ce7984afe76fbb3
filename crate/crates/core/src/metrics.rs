//! Latitude-weighted verification metrics and reference forecasts.
//!
//! All metrics take fields in physical units and accumulate in f64 in a fixed
//! order (time, then latitude, then longitude), so results are reproducible
//! to the bit.

use std::collections::BTreeMap;

use chrono::{Datelike, Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::data::GridField;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Cosine-of-latitude weights normalized so that they sum to the row count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatWeights {
    pub phi: Vec<f64>,
    pub a: Vec<f64>,
}

impl LatWeights {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

/// `A_i = N * cos(phi_i) / sum_l cos(phi_l)` for cell-centre latitudes in degrees.
pub fn lat_weights(phi: &[f64]) -> Result<LatWeights> {
    if phi.is_empty() {
        return Err(Error::Data("latitude weights need at least one row".into()));
    }
    if let Some(bad) = phi.iter().find(|p| !(p.abs() < 90.0)) {
        return Err(Error::Data(format!(
            "latitude {bad} is not a cell centre strictly inside (-90, 90)"
        )));
    }
    let cos: Vec<f64> = phi.iter().map(|p| p.to_radians().cos()).collect();
    let total: f64 = cos.iter().sum();
    let n = phi.len() as f64;
    Ok(LatWeights {
        phi: phi.to_vec(),
        a: cos.iter().map(|c| n * c / total).collect(),
    })
}

fn check_pair(a: &GridField, b: &GridField, w: &LatWeights, op: &'static str) -> Result<()> {
    if a.data.shape() != b.data.shape() {
        return Err(Error::shape(
            op,
            format!(
                "forecast {:?} vs truth {:?}",
                a.data.shape(),
                b.data.shape()
            ),
        ));
    }
    if a.height() != w.len() {
        return Err(Error::shape(
            op,
            format!("{} latitude rows vs {} weights", a.height(), w.len()),
        ));
    }
    Ok(())
}

fn check_series(
    forecast: &[GridField],
    truth: &[GridField],
    w: &LatWeights,
    op: &'static str,
) -> Result<()> {
    if forecast.is_empty() || forecast.len() != truth.len() {
        return Err(Error::Data(format!(
            "{op}: misaligned series ({} forecast vs {} truth fields)",
            forecast.len(),
            truth.len()
        )));
    }
    for (f, t) in forecast.iter().zip(truth) {
        if f.date != t.date {
            return Err(Error::Data(format!(
                "{op}: forecast valid on {} paired with truth on {}",
                f.date, t.date
            )));
        }
        check_pair(f, t, w, op)?;
    }
    Ok(())
}

/// Latitude-weighted sum of squared differences over one plane.
pub fn plane_weighted_sq_error(f: &[f32], y: &[f32], a: &[f64], width: usize) -> f64 {
    let mut total = 0.0;
    for (i, &ai) in a.iter().enumerate() {
        let row = i * width..(i + 1) * width;
        let s: f64 = f[row.clone()]
            .iter()
            .zip(&y[row])
            .map(|(&p, &q)| (p as f64 - q as f64).powi(2))
            .sum();
        total += ai * s;
    }
    total
}

/// Latitude-weighted spatial mean.
pub fn plane_weighted_mean(x: &[f64], a: &[f64], width: usize) -> f64 {
    let mut total = 0.0;
    for (i, &ai) in a.iter().enumerate() {
        total += ai * x[i * width..(i + 1) * width].iter().sum::<f64>();
    }
    total / (a.iter().sum::<f64>() * width as f64)
}

/// Weighted centred correlation of two planes with the given weights per row.
/// Errors when either plane has zero weighted variance.
pub fn plane_centered_correlation(
    f: &[f64],
    y: &[f64],
    a: &[f64],
    width: usize,
    what: &str,
) -> Result<f64> {
    let fm = plane_weighted_mean(f, a, width);
    let ym = plane_weighted_mean(y, a, width);
    let (mut num, mut ff, mut yy) = (0.0, 0.0, 0.0);
    for (i, &ai) in a.iter().enumerate() {
        let (mut n, mut sf, mut sy) = (0.0, 0.0, 0.0);
        for j in 0..width {
            let df = f[i * width + j] - fm;
            let dy = y[i * width + j] - ym;
            n += df * dy;
            sf += df * df;
            sy += dy * dy;
        }
        num += ai * n;
        ff += ai * sf;
        yy += ai * sy;
    }
    if ff <= 0.0 || yy <= 0.0 {
        return Err(Error::ZeroVariance {
            what: what.to_string(),
        });
    }
    Ok((num / (ff * yy).sqrt()).clamp(-1.0, 1.0))
}

fn plane_f64(field: &GridField, channel: usize) -> Vec<f64> {
    field.plane(channel).iter().map(|&v| v as f64).collect()
}

/// Per-variable `sqrt(mean_{t,i,j} A_i (f - y)^2)`.
pub fn weighted_rmse(
    forecast: &[GridField],
    truth: &[GridField],
    w: &LatWeights,
) -> Result<Vec<f64>> {
    check_series(forecast, truth, w, "weighted_rmse")?;
    let first = &forecast[0];
    let n = (forecast.len() * first.height() * first.width()) as f64;
    Ok((0..first.num_channels())
        .map(|c| {
            let s: f64 = forecast
                .iter()
                .zip(truth)
                .map(|(f, y)| plane_weighted_sq_error(f.plane(c), y.plane(c), &w.a, f.width()))
                .sum();
            (s / n).sqrt()
        })
        .collect())
}

/// What the overlined means in the correlation subtract.
#[derive(Debug, Clone, Copy)]
pub enum AnomalyMode<'a> {
    /// Centre each field on its own latitude-weighted spatial mean.
    SpatialMeanRemoved,
    /// Subtract the day-of-year climatology first, then centre.
    ClimatologyAnomaly(&'a Climatology),
}

impl AnomalyMode<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            AnomalyMode::SpatialMeanRemoved => "spatial_mean_removed",
            AnomalyMode::ClimatologyAnomaly(_) => "climatology_anomaly",
        }
    }
}

/// Per-variable time-mean anomaly correlation coefficient.
pub fn acc(
    forecast: &[GridField],
    truth: &[GridField],
    w: &LatWeights,
    mode: AnomalyMode<'_>,
) -> Result<Vec<f64>> {
    check_series(forecast, truth, w, "acc")?;
    (0..forecast[0].num_channels())
        .map(|c| acc_channel(forecast, truth, w, mode, c))
        .collect()
}

/// Time-mean anomaly correlation of a single channel.
pub fn acc_channel(
    forecast: &[GridField],
    truth: &[GridField],
    w: &LatWeights,
    mode: AnomalyMode<'_>,
    channel: usize,
) -> Result<f64> {
    check_series(forecast, truth, w, "acc")?;
    if channel >= forecast[0].num_channels() {
        return Err(Error::Data(format!("channel {channel} out of range")));
    }
    let width = forecast[0].width();
    let mut total = 0.0;
    for (f, y) in forecast.iter().zip(truth) {
        let mut fp = plane_f64(f, channel);
        let mut yp = plane_f64(y, channel);
        if let AnomalyMode::ClimatologyAnomaly(clim) = mode {
            let cp = clim.at_channel(y.date, channel)?;
            fp.iter_mut().zip(&cp).for_each(|(v, m)| *v -= m);
            yp.iter_mut().zip(&cp).for_each(|(v, m)| *v -= m);
        }
        let what = format!("channel `{}` on {}", f.channels[channel].name, f.date);
        total += plane_centered_correlation(&fp, &yp, &w.a, width, &what)?;
    }
    Ok(total / forecast.len() as f64)
}

/// Latitude/longitude box in degrees. `lon_min > lon_max` wraps across 0 degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Region {
    pub const GLOBAL: Region = Region {
        lat_min: -90.0,
        lat_max: 90.0,
        lon_min: 0.0,
        lon_max: 360.0,
    };

    pub fn contains_lon(&self, lon: f64) -> bool {
        let lon = lon.rem_euclid(360.0);
        if self.lon_max - self.lon_min >= 360.0 {
            return true;
        }
        let (lo, hi) = (
            self.lon_min.rem_euclid(360.0),
            self.lon_max.rem_euclid(360.0),
        );
        if lo <= hi {
            lon >= lo && lon <= hi
        } else {
            lon >= lo || lon <= hi
        }
    }
}

/// Weighted centred Pearson correlation of one channel over a region.
pub fn pattern_correlation(
    forecast: &GridField,
    truth: &GridField,
    channel: usize,
    region: &Region,
    w: &LatWeights,
) -> Result<f64> {
    check_pair(forecast, truth, w, "pattern_correlation")?;
    if channel >= forecast.num_channels() {
        return Err(Error::Data(format!("channel {channel} out of range")));
    }
    let rows: Vec<usize> = (0..forecast.height())
        .filter(|&i| (region.lat_min..=region.lat_max).contains(&forecast.grid.lat[i]))
        .collect();
    let cols: Vec<usize> = (0..forecast.width())
        .filter(|&j| region.contains_lon(forecast.grid.lon[j]))
        .collect();
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::Data(format!(
            "region {region:?} does not intersect the grid"
        )));
    }
    let crop = |field: &GridField| -> Vec<f64> {
        let p = field.plane(channel);
        rows.iter()
            .flat_map(|&i| cols.iter().map(move |&j| p[i * field.width() + j] as f64))
            .collect()
    };
    let a: Vec<f64> = rows.iter().map(|&i| w.a[i]).collect();
    let what = format!("channel `{}` in region", forecast.channels[channel].name);
    plane_centered_correlation(&crop(forecast), &crop(truth), &a, cols.len(), &what)
}

/// The initial state repeated at every lead, dated at its valid time.
pub fn persistence_baseline(initial: &GridField, leads: &[u32]) -> Result<Vec<GridField>> {
    leads
        .iter()
        .map(|&l| {
            let date = add_days(initial.date, l)?;
            Ok(GridField {
                date,
                ..initial.clone()
            })
        })
        .collect()
}

pub(crate) fn add_days(date: NaiveDate, days: u32) -> Result<NaiveDate> {
    date.checked_add_days(Days::new(days as u64))
        .ok_or_else(|| Error::Data(format!("{date} + {days} days overflows the calendar")))
}

/// Days either side of the target day of year averaged into the climatology.
pub const CLIMATOLOGY_HALF_WINDOW: u32 = 7;
const DAYS_IN_CYCLE: u32 = 366;

fn in_window(a: u32, b: u32) -> bool {
    let dist = a.abs_diff(b);
    dist.min(DAYS_IN_CYCLE - dist) <= CLIMATOLOGY_HALF_WINDOW
}

/// Per-channel, per-cell, day-of-year mean with a 15-day window.
#[derive(Debug, Clone, PartialEq)]
pub struct Climatology {
    shape: Vec<usize>,
    /// Day-of-year (0-based) to accumulated sum and count.
    by_day: BTreeMap<u32, (Vec<f64>, usize)>,
    overall: Vec<f64>,
}

impl Climatology {
    pub fn from_fields(fields: &[GridField]) -> Result<Self> {
        let first = fields
            .first()
            .ok_or_else(|| Error::Data("climatology needs at least one field".into()))?;
        let numel = first.data.numel();
        let mut by_day: BTreeMap<u32, (Vec<f64>, usize)> = BTreeMap::new();
        let mut overall = vec![0.0; numel];
        for f in fields {
            if f.data.shape() != first.data.shape() {
                return Err(Error::Data(format!(
                    "field on {} has a different shape",
                    f.date
                )));
            }
            let entry = by_day
                .entry(f.date.ordinal0())
                .or_insert_with(|| (vec![0.0; numel], 0));
            for ((s, o), &v) in entry
                .0
                .iter_mut()
                .zip(overall.iter_mut())
                .zip(f.data.data())
            {
                *s += v as f64;
                *o += v as f64;
            }
            entry.1 += 1;
        }
        let n = fields.len() as f64;
        overall.iter_mut().for_each(|o| *o /= n);
        Ok(Self {
            shape: first.data.shape().to_vec(),
            by_day,
            overall,
        })
    }

    /// Mean state for the day of year of `date`, laid out like the fields.
    /// Falls back to the all-period mean when no training day lies in the window.
    pub fn at(&self, date: NaiveDate) -> Result<Vec<f64>> {
        let doy = date.ordinal0();
        let mut sum = vec![0.0; self.overall.len()];
        let mut count = 0;
        for (&d, (s, c)) in &self.by_day {
            if in_window(doy, d) {
                sum.iter_mut().zip(s).for_each(|(a, b)| *a += b);
                count += c;
            }
        }
        if count == 0 {
            return Ok(self.overall.clone());
        }
        Ok(sum.into_iter().map(|s| s / count as f64).collect())
    }

    /// One channel plane of [`Climatology::at`].
    pub fn at_channel(&self, date: NaiveDate, channel: usize) -> Result<Vec<f64>> {
        let hw = self.shape[1] * self.shape[2];
        if channel >= self.shape[0] {
            return Err(Error::Data(format!("channel {channel} out of range")));
        }
        let range = channel * hw..(channel + 1) * hw;
        let doy = date.ordinal0();
        let mut sum = vec![0.0; hw];
        let mut count = 0;
        for (&d, (s, c)) in &self.by_day {
            if in_window(doy, d) {
                sum.iter_mut()
                    .zip(&s[range.clone()])
                    .for_each(|(a, b)| *a += b);
                count += c;
            }
        }
        if count == 0 {
            return Ok(self.overall[range].to_vec());
        }
        Ok(sum.into_iter().map(|s| s / count as f64).collect())
    }

    pub fn field_at(&self, template: &GridField, date: NaiveDate) -> Result<GridField> {
        let data = self.at(date)?.into_iter().map(|v| v as f32).collect();
        template.with_data(Tensor::new(self.shape.clone(), data)?, date)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    /// `model`, `persistence`, or `climatology`.
    pub source: String,
    pub variable: String,
    pub lead: u32,
    pub rmse: f64,
    /// `None` where the correlation is undefined (no anomaly variance).
    pub acc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern_corr: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub acc_mode: String,
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source,variable,lead,rmse,acc,pattern_corr,count\n");
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map(|v| format!("{v:.12e}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{:.12e},{},{},{}\n",
                r.source,
                r.variable,
                r.lead,
                r.rmse,
                opt(r.acc),
                opt(r.pattern_corr),
                r.count
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn find(&self, source: &str, variable: &str, lead: u32) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.source == source && r.variable == variable && r.lead == lead)
    }
}
