//! Published field results kept as fixtures: the pooled cumulative
//! deviation curves of the three model kinds and the per-well RMSE/MAE box
//! summaries.
//!
//! The field data itself is not available. The curves are stored as
//! plotted, and every value is an exact multiple of `100 / 3770`, so the
//! underlying test set had 3770 samples. [`reconstruct_deviations`] rebuilds
//! a deviation sample with the same curve, which lets the ordinary metric
//! code re-render it.

use vfm_core::metrics::{cdp_from_relative, CdpTable};
use vfm_core::model::ModelKind;

use crate::error::{AppError, Result};

const CDP_CSV: &str = include_str!("../fixtures/cdp_series.csv");
const BOX_CSV: &str = include_str!("../fixtures/box_summary.csv");

/// Samples behind the published curves.
pub const CDP_SAMPLES: usize = 3770;

fn fixture_err(what: &str, reason: impl ToString) -> AppError {
    AppError::format(format!("<fixture {what}>"), reason)
}

/// `(deviation, percentage)` points of the published curve of `kind`.
pub fn published_cdp(kind: ModelKind) -> Result<Vec<(u32, f64)>> {
    let col = match kind {
        ModelKind::M => 1,
        ModelKind::H => 2,
        ModelKind::DD => 3,
    };
    let mut rdr = csv::Reader::from_reader(CDP_CSV.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| fixture_err("cdp", e))?;
        let d = rec[0].parse().map_err(|e| fixture_err("cdp", e))?;
        let p = rec[col].parse().map_err(|e| fixture_err("cdp", e))?;
        out.push((d, p));
    }
    Ok(out)
}

/// Relative deviations (fractions) reproducing a cumulative curve over
/// `total` samples. Samples first counted at threshold `d` sit at
/// `d - 0.5` percent; samples never counted sit 10 points beyond the last
/// threshold.
pub fn reconstruct_deviations(curve: &[(u32, f64)], total: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(total);
    let mut prev = 0usize;
    for &(d, p) in curve {
        let exact = p * total as f64 / 100.0;
        let count = exact.round();
        if (exact - count).abs() > 1e-6 || count < prev as f64 || count > total as f64 {
            return Err(fixture_err("cdp", format!("{p}% at {d} is not a count out of {total}")));
        }
        let count = count as usize;
        let at = if d == 0 { 0.0 } else { (d as f64 - 0.5) / 100.0 };
        out.extend(std::iter::repeat_n(at, count - prev));
        prev = count;
    }
    let beyond = (curve.last().map_or(0, |c| c.0) as f64 + 10.0) / 100.0;
    out.extend(std::iter::repeat_n(beyond, total - prev));
    Ok(out)
}

/// Re-render the published curve of `kind` through [`cdp_from_relative`].
pub fn render_published_cdp(kind: ModelKind) -> Result<CdpTable> {
    let curve = published_cdp(kind)?;
    let max_dev = curve.last().map_or(0, |c| c.0);
    let rel = reconstruct_deviations(&curve, CDP_SAMPLES)?;
    cdp_from_relative(&rel, max_dev).map_err(|e| fixture_err("cdp", e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PublishedBox {
    pub kind: ModelKind,
    /// `rmse` or `mae`.
    pub metric: String,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

impl PublishedBox {
    /// Tukey fences `Q1 - 1.5 IQR`, `Q3 + 1.5 IQR` from the stored box.
    pub fn fences(&self) -> (f64, f64) {
        let iqr = self.q3 - self.q1;
        (self.q1 - 1.5 * iqr, self.q3 + 1.5 * iqr)
    }

    /// Rows of a `stat,value` table.
    pub fn render(&self) -> Vec<(String, f64)> {
        let mut rows = vec![
            ("whisker_low".to_string(), self.whisker_low),
            ("q1".to_string(), self.q1),
            ("median".to_string(), self.median),
            ("q3".to_string(), self.q3),
            ("whisker_high".to_string(), self.whisker_high),
        ];
        rows.extend(self.outliers.iter().map(|&o| ("outlier".to_string(), o)));
        rows
    }
}

pub fn published_boxes() -> Result<Vec<PublishedBox>> {
    let mut rdr = csv::Reader::from_reader(BOX_CSV.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| fixture_err("box", e))?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| fixture_err("box", e));
        let outliers = rec[7]
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|e| fixture_err("box", e)))
            .collect::<Result<Vec<_>>>()?;
        out.push(PublishedBox {
            kind: rec[0].parse().map_err(|e| fixture_err("box", e))?,
            metric: rec[1].to_string(),
            q1: num(2)?,
            median: num(3)?,
            q3: num(4)?,
            whisker_low: num(5)?,
            whisker_high: num(6)?,
            outliers,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_published_point_rerenders() {
        for kind in ModelKind::ALL {
            let curve = published_cdp(kind).unwrap();
            assert_eq!(curve.len(), 50);
            let table = render_published_cdp(kind).unwrap();
            for (d, p) in curve {
                let got = table.at(d).unwrap();
                assert!((got - p).abs() <= 1e-12 * p.max(1.0), "{kind} d={d}: {got} vs {p}");
            }
        }
    }

    #[test]
    fn box_fixture_shape() {
        let boxes = published_boxes().unwrap();
        assert_eq!(boxes.len(), 6);
        for b in &boxes {
            assert!(b.whisker_low <= b.q1 && b.q1 <= b.median && b.median <= b.q3 && b.q3 <= b.whisker_high);
            let (_, hi) = b.fences();
            assert!(b.outliers.iter().all(|&o| o > hi));
        }
        let dd: Vec<_> = boxes.iter().filter(|b| b.kind == ModelKind::DD).collect();
        assert_eq!(dd[0].outliers, vec![43.636_801_751_610_3]);
        assert_eq!(dd[1].outliers, vec![38.398_597_041_990_3]);
    }
}
