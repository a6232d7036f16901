//! Error metrics, boxplot statistics and cumulative deviation tables.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::structural("metrics need at least one sample"));
    }
    if y.len() != y_hat.len() {
        return Err(Error::structural(format!(
            "{} measurements but {} estimates",
            y.len(),
            y_hat.len()
        )));
    }
    Ok(())
}

pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    let sse: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(libm::sqrt(sse / y.len() as f64))
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    let sae: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum();
    Ok(sae / y.len() as f64)
}

/// Cumulative deviation table: for `d = 0..=max_dev` the percentage of
/// samples whose deviation relative to the measurement is at most `d` %.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdpTable {
    /// `(d, percentage)` pairs.
    pub points: Vec<(u32, f64)>,
    pub included: usize,
    /// Samples skipped because the measurement is zero.
    pub excluded_zero: usize,
}

impl CdpTable {
    pub fn at(&self, d: u32) -> Option<f64> {
        self.points.iter().find(|p| p.0 == d).map(|p| p.1)
    }
}

/// Relative tolerance of the `d`-threshold comparison, so that exact
/// matches count at `d = 0` and deviations like `0.15` land on `d = 15`
/// despite rounding.
const CDP_TOL: f64 = 1e-12;

pub fn cdp(y: &[f64], y_hat: &[f64], max_dev: u32) -> Result<CdpTable> {
    check_pair(y, y_hat)?;
    let rel: Vec<f64> = y
        .iter()
        .zip(y_hat)
        .filter(|(m, _)| **m != 0.0)
        .map(|(m, e)| (e - m).abs() / m.abs())
        .collect();
    let excluded_zero = y.len() - rel.len();
    cdp_from_relative(&rel, max_dev).map(|mut t| {
        t.excluded_zero = excluded_zero;
        t
    })
}

/// [`cdp`] from precomputed relative deviations (fractions, not percent).
pub fn cdp_from_relative(rel: &[f64], max_dev: u32) -> Result<CdpTable> {
    if rel.is_empty() {
        return Err(Error::structural("no samples with a nonzero measurement"));
    }
    let n = rel.len() as f64;
    let points = (0..=max_dev)
        .map(|d| {
            let limit = d as f64 / 100.0 + CDP_TOL;
            let count = rel.iter().filter(|&&r| r <= limit).count();
            (d, 100.0 * count as f64 / n)
        })
        .collect();
    Ok(CdpTable {
        points,
        included: rel.len(),
        excluded_zero: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

/// Quantile by linear interpolation between order statistics at position
/// `p (n - 1)`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Quartiles, Tukey whiskers (most extreme data points within 1.5 IQR of the
/// box, never inside the box) and the points beyond them.
pub fn boxplot_stats(values: &[f64]) -> Result<BoxplotStats> {
    if values.is_empty() {
        return Err(Error::structural("boxplot of no values"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("boxplot_stats", values));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&s, 0.25);
    let median = quantile_sorted(&s, 0.5);
    let q3 = quantile_sorted(&s, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = s.iter().copied().filter(|v| (lo_fence..=hi_fence).contains(v));
    // an interpolated quartile can lie beyond every inlier; the whisker then
    // collapses onto the box edge
    let whisker_low = inside.clone().fold(f64::INFINITY, f64::min).min(q1);
    let whisker_high = inside.fold(f64::NEG_INFINITY, f64::max).max(q3);
    let outliers = s.iter().copied().filter(|v| !(lo_fence..=hi_fence).contains(v)).collect();
    Ok(BoxplotStats {
        median,
        q1,
        q3,
        whisker_low,
        whisker_high,
        outliers,
    })
}

/// Test-split errors of one model on one well.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellMetrics {
    pub well: String,
    pub split: String,
    pub n: usize,
    pub rmse: f64,
    pub mae: f64,
}

impl WellMetrics {
    pub fn compute(well: &str, split: &str, y: &[f64], y_hat: &[f64]) -> Result<Self> {
        Ok(WellMetrics {
            well: well.into(),
            split: split.into(),
            n: y.len(),
            rmse: rmse(y, y_hat)?,
            mae: mae(y, y_hat)?,
        })
    }
}

/// Per-well metrics of one model kind plus cross-well aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub wells: Vec<WellMetrics>,
    pub mean_rmse: f64,
    pub mean_mae: f64,
    pub rmse_box: BoxplotStats,
    pub mae_box: BoxplotStats,
    /// Pooled over all wells' samples.
    pub cdp: CdpTable,
}

impl MetricReport {
    /// `per_well` holds `(well metrics, measurements, estimates)`.
    pub fn aggregate(per_well: &[(WellMetrics, Vec<f64>, Vec<f64>)], max_dev: u32) -> Result<Self> {
        if per_well.is_empty() {
            return Err(Error::structural("no wells to aggregate"));
        }
        let rmses: Vec<f64> = per_well.iter().map(|w| w.0.rmse).collect();
        let maes: Vec<f64> = per_well.iter().map(|w| w.0.mae).collect();
        let y: Vec<f64> = per_well.iter().flat_map(|w| w.1.iter().copied()).collect();
        let y_hat: Vec<f64> = per_well.iter().flat_map(|w| w.2.iter().copied()).collect();
        let n = per_well.len() as f64;
        Ok(MetricReport {
            wells: per_well.iter().map(|w| w.0.clone()).collect(),
            mean_rmse: rmses.iter().sum::<f64>() / n,
            mean_mae: maes.iter().sum::<f64>() / n,
            rmse_box: boxplot_stats(&rmses)?,
            mae_box: boxplot_stats(&maes)?,
            cdp: cdp(&y, &y_hat, max_dev)?,
        })
    }
}
