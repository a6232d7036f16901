//! From raw well time series to labelled steady-state datasets.
//!
//! Stages, in order: [`squash`] → [`clean`] → [`assign_fractions`] →
//! [`schedule_fractions`] → [`split`]. [`preprocess`] runs all of them.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{FluidState, PhysicalConstants};

/// One row of a raw well file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
    pub p1: f64,
    pub p2: f64,
    pub t1: f64,
    pub t2: f64,
    pub z: f64,
    pub q_g: f64,
    pub q_o: f64,
    pub q_w: f64,
}

/// A steady-state operating point: channel means over one interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadySample {
    pub start: i64,
    pub end: i64,
    pub records: usize,
    pub p1: f64,
    pub p2: f64,
    pub t1: f64,
    pub t2: f64,
    pub z: f64,
    pub q_g: f64,
    /// Measured oil rate, the training target.
    pub q_o: f64,
    pub q_w: f64,
    /// Instantaneous mass fractions from this sample's rates.
    pub w_g: f64,
    pub w_o: f64,
    /// Fractions in effect under the periodic update schedule.
    pub w_g_sched: f64,
    pub w_o_sched: f64,
}

impl SteadySample {
    /// Fluid state using scheduled (`true`) or instantaneous fractions.
    pub fn fluid_state(&self, scheduled: bool) -> FluidState {
        let (w_g, w_o) = if scheduled {
            (self.w_g_sched, self.w_o_sched)
        } else {
            (self.w_g, self.w_o)
        };
        FluidState {
            p1: self.p1,
            p2: self.p2,
            t1: self.t1,
            z: self.z,
            w_g,
            w_o,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SquashConfig {
    /// Rolling window length in records.
    pub window: usize,
    /// Largest rolling standard deviation, relative to the channel's largest
    /// magnitude, that still counts as steady.
    pub threshold: f64,
}

impl Default for SquashConfig {
    fn default() -> Self {
        SquashConfig {
            window: 6,
            threshold: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SquashOutcome {
    pub samples: Vec<SteadySample>,
    /// Records not covered by any steady interval.
    pub transient_records: usize,
}

fn window_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    libm::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
}

fn channel_scale(values: impl Iterator<Item = f64>) -> f64 {
    let m = values.fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Compress a raw series to steady-state samples.
///
/// A record window is steady when the population standard deviation of both
/// the choke opening and the upstream pressure stays below
/// `threshold * max|channel|`. Overlapping steady windows merge into one
/// interval, emitted with the arithmetic mean of every channel. This is a
/// simple rolling-statistics detector, not an industrial squashing
/// algorithm.
pub fn squash(records: &[RawRecord], cfg: &SquashConfig) -> Result<SquashOutcome> {
    if records.is_empty() {
        return Err(Error::structural("squash needs at least one record"));
    }
    if cfg.window == 0 || !(cfg.threshold > 0.0) {
        return Err(Error::invalid("squash config", format!("{cfg:?}")));
    }
    if let Some(i) = records.windows(2).position(|w| w[1].timestamp <= w[0].timestamp) {
        return Err(Error::structural(format!(
            "timestamps must strictly increase (record {})",
            i + 1
        )));
    }
    let w = cfg.window;
    let n = records.len();
    let z: Vec<f64> = records.iter().map(|r| r.z).collect();
    let p1: Vec<f64> = records.iter().map(|r| r.p1).collect();
    let z_tol = cfg.threshold * channel_scale(z.iter().copied());
    let p_tol = cfg.threshold * channel_scale(p1.iter().copied());

    let steady: Vec<bool> = if n < w {
        Vec::new()
    } else {
        (0..=n - w)
            .map(|j| window_std(&z[j..j + w]) < z_tol && window_std(&p1[j..j + w]) < p_tol)
            .collect()
    };

    let mut samples = Vec::new();
    let mut covered = 0;
    let mut j = 0;
    while j < steady.len() {
        if !steady[j] {
            j += 1;
            continue;
        }
        let first = j;
        while j + 1 < steady.len() && steady[j + 1] {
            j += 1;
        }
        let (lo, hi) = (first, j + w - 1);
        covered += hi - lo + 1;
        samples.push(interval_mean(&records[lo..=hi]));
        j += 1;
    }
    Ok(SquashOutcome {
        samples,
        transient_records: n - covered,
    })
}

fn interval_mean(records: &[RawRecord]) -> SteadySample {
    let n = records.len() as f64;
    let mean = |f: fn(&RawRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    SteadySample {
        start: records[0].timestamp,
        end: records[records.len() - 1].timestamp,
        records: records.len(),
        p1: mean(|r| r.p1),
        p2: mean(|r| r.p2),
        t1: mean(|r| r.t1),
        t2: mean(|r| r.t2),
        z: mean(|r| r.z),
        q_g: mean(|r| r.q_g),
        q_o: mean(|r| r.q_o),
        q_w: mean(|r| r.q_w),
        w_g: 0.0,
        w_o: 0.0,
        w_g_sched: 0.0,
        w_o_sched: 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanConfig {
    /// Upstream pressures above this are unrealistic [bar].
    pub p_max: f64,
    /// Oil rates in `[-q_tol, 0)` are measurement noise and clamp to zero;
    /// anything below `-q_tol` is dropped [Sm³/h].
    pub q_tol: f64,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            p_max: 500.0,
            q_tol: 1.0,
        }
    }
}

/// Why a sample was dropped. The first failing rule wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectRule {
    NonFinite,
    P1OutOfRange,
    P2NonPositive,
    P2AboveP1,
    ChokeOutOfRange,
    TemperatureNonPositive,
    NegativeOilRate,
    NegativeGasOrWaterRate,
    NoFlow,
}

impl RejectRule {
    pub const ALL: [RejectRule; 9] = [
        RejectRule::NonFinite,
        RejectRule::P1OutOfRange,
        RejectRule::P2NonPositive,
        RejectRule::P2AboveP1,
        RejectRule::ChokeOutOfRange,
        RejectRule::TemperatureNonPositive,
        RejectRule::NegativeOilRate,
        RejectRule::NegativeGasOrWaterRate,
        RejectRule::NoFlow,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            RejectRule::NonFinite => "non_finite",
            RejectRule::P1OutOfRange => "p1_out_of_range",
            RejectRule::P2NonPositive => "p2_non_positive",
            RejectRule::P2AboveP1 => "p2_above_p1",
            RejectRule::ChokeOutOfRange => "choke_out_of_range",
            RejectRule::TemperatureNonPositive => "temperature_non_positive",
            RejectRule::NegativeOilRate => "negative_oil_rate",
            RejectRule::NegativeGasOrWaterRate => "negative_gas_or_water_rate",
            RejectRule::NoFlow => "no_flow",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RejectionReport {
    /// `(index in the input, rule)` for every dropped sample.
    pub rejected: Vec<(usize, RejectRule)>,
    /// Number of kept samples whose oil rate was clamped to zero.
    pub clamped: usize,
}

impl RejectionReport {
    pub fn count(&self, rule: RejectRule) -> usize {
        self.rejected.iter().filter(|r| r.1 == rule).count()
    }
}

fn rejection(s: &SteadySample, cfg: &CleanConfig) -> Option<RejectRule> {
    let fields = [s.p1, s.p2, s.t1, s.t2, s.z, s.q_g, s.q_o, s.q_w];
    if fields.iter().any(|v| !v.is_finite()) {
        return Some(RejectRule::NonFinite);
    }
    if !(s.p1 > 0.0 && s.p1 <= cfg.p_max) {
        return Some(RejectRule::P1OutOfRange);
    }
    if !(s.p2 > 0.0) {
        return Some(RejectRule::P2NonPositive);
    }
    if s.p2 > s.p1 {
        return Some(RejectRule::P2AboveP1);
    }
    if !(0.0..=1.0).contains(&s.z) {
        return Some(RejectRule::ChokeOutOfRange);
    }
    if !(s.t1 > 0.0) {
        return Some(RejectRule::TemperatureNonPositive);
    }
    if s.q_o < -cfg.q_tol {
        return Some(RejectRule::NegativeOilRate);
    }
    if s.q_g < 0.0 || s.q_w < 0.0 {
        return Some(RejectRule::NegativeGasOrWaterRate);
    }
    if s.q_g == 0.0 && s.q_o.max(0.0) == 0.0 && s.q_w == 0.0 {
        return Some(RejectRule::NoFlow);
    }
    None
}

/// Drop invalid samples and clamp small negative oil rates to zero. No
/// other field is modified.
pub fn clean(samples: &[SteadySample], cfg: &CleanConfig) -> (Vec<SteadySample>, RejectionReport) {
    let mut kept = Vec::with_capacity(samples.len());
    let mut report = RejectionReport::default();
    for (i, s) in samples.iter().enumerate() {
        if let Some(rule) = rejection(s, cfg) {
            report.rejected.push((i, rule));
            continue;
        }
        let mut s = *s;
        if s.q_o < 0.0 {
            s.q_o = 0.0;
            report.clamped += 1;
        }
        kept.push(s);
    }
    (kept, report)
}

/// Mass fractions `(w_g, w_o, w_w)` from standard-condition volumetric
/// rates and densities.
pub fn mass_fractions(
    q_g: f64,
    q_o: f64,
    q_w: f64,
    rho_g_st: f64,
    rho_o_st: f64,
    rho_w_st: f64,
) -> Result<(f64, f64, f64)> {
    if q_g < 0.0 || q_o < 0.0 || q_w < 0.0 {
        return Err(Error::domain("mass_fractions", &[q_g, q_o, q_w]));
    }
    if !(rho_g_st > 0.0 && rho_o_st > 0.0 && rho_w_st > 0.0) {
        return Err(Error::domain("mass_fractions", &[rho_g_st, rho_o_st, rho_w_st]));
    }
    let (m_g, m_o, m_w) = (rho_g_st * q_g, rho_o_st * q_o, rho_w_st * q_w);
    let total = m_g + m_o + m_w;
    if !(total > 0.0) {
        return Err(Error::domain("mass_fractions", &[q_g, q_o, q_w]));
    }
    let w_g = m_g / total;
    let w_o = m_o / total;
    Ok((w_g, w_o, 1.0 - w_g - w_o))
}

/// Fill instantaneous fractions; scheduled fractions start out equal.
pub fn assign_fractions(samples: &mut [SteadySample], c: &PhysicalConstants) -> Result<()> {
    for (i, s) in samples.iter_mut().enumerate() {
        let (w_g, w_o, _) =
            mass_fractions(s.q_g, s.q_o, s.q_w, c.rho_g_st, c.rho_o_st, c.rho_w_st).map_err(|e| e.at_sample(i))?;
        s.w_g = w_g;
        s.w_o = w_o;
        s.w_g_sched = w_g;
        s.w_o_sched = w_o;
    }
    Ok(())
}

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Periodic fraction updates that mimic sparse well tests.
///
/// Update `k >= 1` happens at `t0 + k * period`, where `t0` is the first
/// sample's start. It averages the instantaneous fractions of the latest
/// `min(lookback, available)` samples that started before the update and
/// applies to samples starting in `[t_k, t_{k+1})`. Samples of the first
/// period carry the value of the first update.
pub fn schedule_fractions(samples: &mut [SteadySample], period_days: f64, lookback: usize) -> Result<()> {
    if samples.is_empty() {
        return Ok(());
    }
    if !(period_days > 0.0) || lookback == 0 {
        return Err(Error::invalid(
            "fraction schedule",
            format!("period {period_days} days, lookback {lookback}"),
        ));
    }
    if samples.windows(2).any(|w| w[1].start < w[0].start) {
        return Err(Error::structural("samples must be time-ordered"));
    }
    let period = period_days * SECONDS_PER_DAY as f64;
    let t0 = samples[0].start;
    let period_of = |t: i64| libm::floor((t - t0) as f64 / period) as usize;

    let inst: Vec<(f64, f64)> = samples.iter().map(|s| (s.w_g, s.w_o)).collect();
    let starts: Vec<i64> = samples.iter().map(|s| s.start).collect();
    let average_before = |k: usize| -> (f64, f64) {
        let update_time = t0 as f64 + k as f64 * period;
        let available = starts.partition_point(|&t| (t as f64) < update_time);
        let from = available.saturating_sub(lookback);
        let window = &inst[from..available];
        let n = window.len() as f64;
        let (g, o) = window.iter().fold((0.0, 0.0), |acc, w| (acc.0 + w.0, acc.1 + w.1));
        (g / n, o / n)
    };

    let mut current: Option<(usize, (f64, f64))> = None;
    for s in samples.iter_mut() {
        // first period uses the first update
        let k = period_of(s.start).max(1);
        let value = match current {
            Some((ck, v)) if ck == k => v,
            _ => {
                let v = average_before(k);
                current = Some((k, v));
                v
            }
        };
        s.w_g_sched = value.0;
        s.w_o_sched = value.1;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitLabel {
    Fit,
    Validation,
    Test,
}

impl SplitLabel {
    pub fn tag(self) -> &'static str {
        match self {
            SplitLabel::Fit => "fit",
            SplitLabel::Validation => "validation",
            SplitLabel::Test => "test",
        }
    }
}

/// Chronologically split samples of one well.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellDataset {
    pub well_id: String,
    pub samples: Vec<SteadySample>,
    pub n_fit: usize,
    pub n_validation: usize,
}

impl WellDataset {
    pub fn n_train(&self) -> usize {
        self.n_fit + self.n_validation
    }

    pub fn fit(&self) -> &[SteadySample] {
        &self.samples[..self.n_fit]
    }

    pub fn validation(&self) -> &[SteadySample] {
        &self.samples[self.n_fit..self.n_train()]
    }

    /// Fit and validation samples together.
    pub fn train(&self) -> &[SteadySample] {
        &self.samples[..self.n_train()]
    }

    pub fn test(&self) -> &[SteadySample] {
        &self.samples[self.n_train()..]
    }

    pub fn labels(&self) -> Vec<SplitLabel> {
        (0..self.samples.len())
            .map(|i| {
                if i < self.n_fit {
                    SplitLabel::Fit
                } else if i < self.n_train() {
                    SplitLabel::Validation
                } else {
                    SplitLabel::Test
                }
            })
            .collect()
    }

    /// Rebuild from per-sample labels, which must be contiguous and in
    /// fit → validation → test order.
    pub fn from_labels(well_id: String, samples: Vec<SteadySample>, labels: &[SplitLabel]) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::structural("one split label per sample"));
        }
        let n_fit = labels.iter().take_while(|l| **l == SplitLabel::Fit).count();
        let n_validation = labels[n_fit..].iter().take_while(|l| **l == SplitLabel::Validation).count();
        if labels[n_fit + n_validation..].iter().any(|l| *l != SplitLabel::Test) {
            return Err(Error::structural("split labels are not chronological"));
        }
        Ok(WellDataset {
            well_id,
            samples,
            n_fit,
            n_validation,
        })
    }
}

/// First `floor(0.75 n)` samples train, the rest test; the latest
/// `floor(0.15 * n_train)` training samples validate.
pub fn split(well_id: &str, samples: Vec<SteadySample>) -> Result<WellDataset> {
    let n = samples.len();
    if n < 8 {
        return Err(Error::structural(format!("split needs at least 8 samples, got {n}")));
    }
    if samples.windows(2).any(|w| w[1].start <= w[0].end) {
        return Err(Error::structural("samples must be time-ordered and non-overlapping"));
    }
    let n_train = n * 3 / 4;
    let n_validation = n_train * 15 / 100;
    Ok(WellDataset {
        well_id: well_id.into(),
        samples,
        n_fit: n_train - n_validation,
        n_validation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub squash: SquashConfig,
    pub clean: CleanConfig,
    pub fraction_period_days: f64,
    pub fraction_lookback: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            squash: SquashConfig::default(),
            clean: CleanConfig::default(),
            fraction_period_days: 30.0,
            fraction_lookback: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub raw_records: usize,
    pub transient_records: usize,
    pub squashed: usize,
    pub rejections: RejectionReport,
}

/// Run every stage on one well's raw records.
pub fn preprocess(
    well_id: &str,
    records: &[RawRecord],
    cfg: &PipelineConfig,
    constants: &PhysicalConstants,
) -> Result<(WellDataset, PipelineReport)> {
    let squashed = squash(records, &cfg.squash)?;
    let (mut kept, rejections) = clean(&squashed.samples, &cfg.clean);
    assign_fractions(&mut kept, constants)?;
    schedule_fractions(&mut kept, cfg.fraction_period_days, cfg.fraction_lookback)?;
    let report = PipelineReport {
        raw_records: records.len(),
        transient_records: squashed.transient_records,
        squashed: squashed.samples.len(),
        rejections,
    };
    Ok((split(well_id, kept)?, report))
}
