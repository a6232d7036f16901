//! Synthetic wells with known ground truth.
//!
//! Each well is a sequence of operating points. A point is held for
//! `steady_records` records after `transient_records` records of pressure
//! swings that mimic the choke moving. Rates come from the mechanistic
//! choke model evaluated with the true densities and Cv curve; noise is
//! added on top.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{self, CvCurve, FluidState, PhysicalConstants};
use crate::pipeline::{RawRecord, SECONDS_PER_DAY};

/// Choke openings used for the points before `until` (a fraction of the
/// well's points).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZPhase {
    pub until: f64,
    pub z_min: f64,
    pub z_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthParams {
    pub rho_o: f64,
    pub rho_w: f64,
    pub a: f64,
    pub cv_points: Vec<(f64, f64)>,
}

impl Default for TruthParams {
    fn default() -> Self {
        TruthParams {
            rho_o: 800.0,
            rho_w: 1025.0,
            a: 1.1,
            cv_points: default_cv_points(),
        }
    }
}

/// A convex, equal-percentage-like valve characteristic.
pub fn default_cv_points() -> Vec<(f64, f64)> {
    [0.0, 4.0, 12.0, 24.0, 40.0, 60.0, 84.0, 110.0, 138.0, 168.0, 200.0]
        .iter()
        .enumerate()
        .map(|(i, &cv)| (i as f64 / 10.0, cv))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub wells: usize,
    /// Span of each well's history.
    pub days: f64,
    pub start_timestamp: i64,
    /// Operating points per well, drawn uniformly from this range.
    pub points_min: usize,
    pub points_max: usize,
    pub steady_records: usize,
    pub transient_records: usize,
    pub p1_range: (f64, f64),
    pub p2_range: (f64, f64),
    pub t1_range: (f64, f64),
    /// Downstream temperature drop per bar of pressure drop [K/bar].
    pub t2_drop_per_bar: f64,
    pub z_phases: Vec<ZPhase>,
    pub gas_fraction_range: (f64, f64),
    /// Water mass share of the liquid at the start of the history.
    pub water_cut_range: (f64, f64),
    pub water_cut_drift_per_year: f64,
    /// Standard deviation of point-to-point fraction jitter.
    pub fraction_jitter: f64,
    /// Relative std of a multiplicative error common to the three metered
    /// rates of one operating point.
    pub rate_noise_rel: f64,
    /// Relative std of independent per-record noise on every channel.
    pub sensor_noise_rel: f64,
    pub truth: TruthParams,
    pub constants: PhysicalConstants,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            wells: 10,
            days: 730.0,
            start_timestamp: 1_577_836_800,
            points_min: 612,
            points_max: 2175,
            steady_records: 12,
            transient_records: 3,
            p1_range: (25.0, 60.0),
            p2_range: (12.0, 22.0),
            t1_range: (330.0, 360.0),
            t2_drop_per_bar: 0.3,
            z_phases: alloc::vec![ZPhase {
                until: 1.0,
                z_min: 0.1,
                z_max: 1.0,
            }],
            gas_fraction_range: (0.03, 0.12),
            water_cut_range: (0.1, 0.4),
            water_cut_drift_per_year: 0.1,
            fraction_jitter: 0.01,
            rate_noise_rel: 0.05,
            sensor_noise_rel: 0.0005,
            truth: TruthParams::default(),
            constants: PhysicalConstants::default(),
        }
    }
}

fn check_range(name: &'static str, r: (f64, f64), lo: f64, hi: f64) -> Result<()> {
    if !(r.0.is_finite() && r.1.is_finite() && lo <= r.0 && r.0 <= r.1 && r.1 <= hi) {
        return Err(Error::invalid(name, format!("{r:?} must be ordered within [{lo}, {hi}]")));
    }
    Ok(())
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p2_range.1 > self.p1_range.0 {
            return Err(Error::structural(format!(
                "infeasible pressures: p2 up to {} exceeds p1 from {}",
                self.p2_range.1, self.p1_range.0
            )));
        }
        check_range("p1_range", self.p1_range, f64::MIN_POSITIVE, f64::MAX)?;
        check_range("p2_range", self.p2_range, f64::MIN_POSITIVE, f64::MAX)?;
        check_range("t1_range", self.t1_range, f64::MIN_POSITIVE, f64::MAX)?;
        check_range("gas_fraction_range", self.gas_fraction_range, 0.0, 1.0)?;
        check_range("water_cut_range", self.water_cut_range, 0.0, 1.0)?;
        if self.wells == 0 || self.points_min == 0 || self.points_min > self.points_max {
            return Err(Error::invalid("synth counts", "need wells >= 1 and 1 <= points_min <= points_max"));
        }
        if self.steady_records == 0 || !(self.days > 0.0) {
            return Err(Error::invalid("synth timing", "need steady_records >= 1 and days > 0"));
        }
        let spacing = self.days * SECONDS_PER_DAY as f64
            / (self.points_max * (self.steady_records + self.transient_records)) as f64;
        if spacing < 1.0 {
            return Err(Error::invalid("synth timing", "records would be less than a second apart"));
        }
        if self.z_phases.is_empty() || self.z_phases.last().is_some_and(|p| p.until < 1.0) {
            return Err(Error::invalid("z_phases", "phases must cover all points (last until >= 1)"));
        }
        for p in &self.z_phases {
            check_range("z phase", (p.z_min, p.z_max), 0.0, 1.0)?;
        }
        if self.z_phases.windows(2).any(|w| w[1].until < w[0].until) {
            return Err(Error::invalid("z_phases", "phases must be ordered by `until`"));
        }
        for v in [self.rate_noise_rel, self.sensor_noise_rel, self.fraction_jitter, self.t2_drop_per_bar] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid("synth noise", format!("{v} must be finite and nonnegative")));
            }
        }
        if !(self.truth.rho_o > 0.0 && self.truth.rho_w > 0.0 && self.truth.a > 0.0) {
            return Err(Error::invalid("truth", "densities and shift must be positive"));
        }
        CvCurve::new(self.truth.cv_points.clone(), self.truth.a)?;
        self.constants.validate()
    }
}

/// Scalar ground truth of one well, as written to the sidecar file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WellTruth {
    pub well_id: String,
    pub seed: u64,
    pub points: usize,
    pub rho_o: f64,
    pub rho_w: f64,
    pub a: f64,
    pub cv_points: Vec<(f64, f64)>,
    pub gas_fraction: f64,
    pub water_cut_start: f64,
    pub water_cut_drift_per_year: f64,
    pub constants: PhysicalConstants,
}

/// One planted operating point, noise free.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedPoint {
    pub start: i64,
    pub state: FluidState,
    pub t2: f64,
    pub q_g: f64,
    pub q_o: f64,
    pub q_w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthWell {
    pub truth: WellTruth,
    pub planted: Vec<PlantedPoint>,
    pub records: Vec<RawRecord>,
}

pub fn well_id(index: usize) -> String {
    format!("well_{:02}", index + 1)
}

/// Per-well seed derived from the run seed.
pub fn well_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64 + 1).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

fn uniform(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.1 > r.0 {
        rng.random_range(r.0..r.1)
    } else {
        r.0
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Generate all wells of `spec`.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Vec<SynthWell>> {
    spec.validate()?;
    (0..spec.wells).map(|i| synth_well(spec, seed, i)).collect()
}

/// Generate well number `index` (0-based) of `spec`; independent of the
/// other wells.
pub fn synth_well(spec: &SynthSpec, seed: u64, index: usize) -> Result<SynthWell> {
    spec.validate()?;
    let s = well_seed(seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(s);
    let points = rng.random_range(spec.points_min..=spec.points_max);
    let gas_fraction = uniform(&mut rng, spec.gas_fraction_range);
    let water_cut_start = uniform(&mut rng, spec.water_cut_range);
    let c = &spec.constants;
    let curve = CvCurve::new(spec.truth.cv_points.clone(), spec.truth.a)?;

    let per_point = spec.steady_records + spec.transient_records;
    let point_seconds = spec.days * SECONDS_PER_DAY as f64 / points as f64;
    let spacing = libm::floor(point_seconds / per_point as f64) as i64;
    let phase_bounds: Vec<usize> = spec
        .z_phases
        .iter()
        .map(|p| libm::floor(p.until * points as f64) as usize)
        .collect();

    let mut planted = Vec::with_capacity(points);
    let mut records = Vec::with_capacity(points * per_point);
    for k in 0..points {
        let start = spec.start_timestamp + (k as f64 * point_seconds) as i64;
        let phase = spec.z_phases[phase_bounds.iter().position(|&b| k < b).unwrap_or(spec.z_phases.len() - 1)];
        let z = uniform(&mut rng, (phase.z_min, phase.z_max));
        let p1 = uniform(&mut rng, spec.p1_range);
        let p2 = uniform(&mut rng, spec.p2_range);
        let t1 = uniform(&mut rng, spec.t1_range);
        let t2 = t1 - spec.t2_drop_per_bar * (p1 - p2);

        let years = (start - spec.start_timestamp) as f64 / (365.0 * SECONDS_PER_DAY as f64);
        let wc = (water_cut_start + spec.water_cut_drift_per_year * years + spec.fraction_jitter * gauss(&mut rng))
            .clamp(0.0, 0.95);
        let w_g = (gas_fraction + spec.fraction_jitter * gauss(&mut rng)).clamp(0.0, 0.5);
        let w_o = (1.0 - w_g) * (1.0 - wc);
        let state = FluidState {
            p1,
            p2,
            t1,
            z,
            w_g,
            w_o,
        };
        let cv = physics::cv_interp(z, &curve)?;
        let m = physics::mass_flow(&state, cv, c, spec.truth.rho_o, spec.truth.rho_w).map_err(|e| e.at_sample(k))?;
        let point = PlantedPoint {
            start,
            state,
            t2,
            q_g: w_g * m / c.rho_g_st,
            q_o: w_o * m / c.rho_o_st,
            q_w: state.w_w() * m / c.rho_w_st,
        };
        planted.push(point);

        let common = 1.0 + spec.rate_noise_rel * gauss(&mut rng);
        for r in 0..per_point {
            let transient = r < spec.transient_records;
            let noisy = |v: f64, rng: &mut ChaCha8Rng| v * (1.0 + spec.sensor_noise_rel * gauss(rng));
            // transient pressures overshoot the whole steady range, so no
            // steady window can bridge two neighbouring points
            let level = if !transient {
                p1
            } else if r % 2 == 0 {
                1.35 * spec.p1_range.1
            } else {
                1.2 * spec.p1_range.1
            };
            let rec_p1 = noisy(level, &mut rng).max(p2 * 1.0001);
            records.push(RawRecord {
                timestamp: start + r as i64 * spacing,
                p1: rec_p1,
                p2: noisy(p2, &mut rng).min(rec_p1),
                t1: noisy(t1, &mut rng),
                t2: noisy(t2, &mut rng),
                z: noisy(z, &mut rng).clamp(0.0, 1.0),
                q_g: noisy(point.q_g * common, &mut rng).max(0.0),
                q_o: noisy(point.q_o * common, &mut rng).max(0.0),
                q_w: noisy(point.q_w * common, &mut rng).max(0.0),
            });
        }
    }

    Ok(SynthWell {
        truth: WellTruth {
            well_id: well_id(index),
            seed: s,
            points,
            rho_o: spec.truth.rho_o,
            rho_w: spec.truth.rho_w,
            a: spec.truth.a,
            cv_points: spec.truth.cv_points.clone(),
            gas_fraction,
            water_cut_start,
            water_cut_drift_per_year: spec.water_cut_drift_per_year,
            constants: spec.constants.clone(),
        },
        planted,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{squash, SquashConfig};

    fn small() -> SynthSpec {
        SynthSpec {
            wells: 2,
            days: 60.0,
            points_min: 40,
            points_max: 60,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn seeded_runs_repeat() {
        let a = synth_generate(&small(), 7).unwrap();
        let b = synth_generate(&small(), 7).unwrap();
        assert_eq!(a.len(), 2);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.records, y.records);
            assert_eq!(x.truth, y.truth);
        }
        let c = synth_generate(&small(), 8).unwrap();
        assert_ne!(a[0].records, c[0].records);
    }

    #[test]
    fn infeasible_pressures_rejected() {
        let spec = SynthSpec {
            p2_range: (12.0, 30.0),
            ..small()
        };
        assert!(matches!(synth_generate(&spec, 1), Err(Error::Structural(_))));
    }

    #[test]
    fn every_point_squashes_to_one_sample() {
        let well = synth_well(&small(), 3, 0).unwrap();
        let out = squash(&well.records, &SquashConfig::default()).unwrap();
        assert_eq!(out.samples.len(), well.planted.len());
        for (s, p) in out.samples.iter().zip(&well.planted) {
            assert!((s.z - p.state.z).abs() < 1e-3);
        }
    }

    #[test]
    fn z_phases_are_respected() {
        let spec = SynthSpec {
            z_phases: alloc::vec![
                ZPhase {
                    until: 0.75,
                    z_min: 0.2,
                    z_max: 0.6
                },
                ZPhase {
                    until: 1.0,
                    z_min: 0.8,
                    z_max: 1.0
                },
            ],
            ..small()
        };
        let well = synth_well(&spec, 5, 1).unwrap();
        let n = well.planted.len();
        for (k, p) in well.planted.iter().enumerate() {
            if k < n * 3 / 4 {
                assert!((0.2..=0.6).contains(&p.state.z));
            } else {
                assert!((0.8..=1.0).contains(&p.state.z));
            }
        }
    }
}
