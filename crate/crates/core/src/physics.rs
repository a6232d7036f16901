//! Mechanistic production choke model.
//!
//! Units: pressures in bar (absolute), temperatures in K, densities in
//! kg/m³, mass flow in kg/h and volumetric rates in Sm³/h. The ideal-gas
//! density converts bar to Pa internally because `R` is in SI units.
//!
//! Every quantity exists twice: as a plain `f64` function used for data
//! generation and as an oracle in tests, and as a graph builder in [`graph`]
//! used for training.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::Knots;
use crate::error::{Error, Result};

pub const BAR_TO_PA: f64 = 1e5;

/// Per-well constants of the choke equations. None of these are learned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalConstants {
    /// Valve sizing constant for kg/h, bar and kg/m³.
    pub n_valve: f64,
    /// Universal gas constant [J/(mol K)].
    pub gas_constant: f64,
    /// Gas molar mass [kg/mol].
    pub gas_molar_mass: f64,
    /// Gas compressibility factor [-].
    pub gas_compressibility: f64,
    /// Terminal pressure-drop ratio at critical (choked) flow [-].
    pub x_tp: f64,
    pub rho_o_st: f64,
    pub rho_w_st: f64,
    pub rho_g_st: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants {
            n_valve: 27.3,
            gas_constant: 8.314,
            gas_molar_mass: 0.020,
            gas_compressibility: 0.9,
            x_tp: 0.5,
            rho_o_st: 850.0,
            rho_w_st: 1025.0,
            rho_g_st: 0.85,
        }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_valve", self.n_valve),
            ("gas_constant", self.gas_constant),
            ("gas_molar_mass", self.gas_molar_mass),
            ("gas_compressibility", self.gas_compressibility),
            ("x_tp", self.x_tp),
            ("rho_o_st", self.rho_o_st),
            ("rho_w_st", self.rho_w_st),
            ("rho_g_st", self.rho_g_st),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid("physical constants", format!("{name} = {v} must be positive")));
            }
        }
        if self.x_tp >= 1.0 {
            return Err(Error::invalid("physical constants", format!("x_tp = {} must be below 1", self.x_tp)));
        }
        if self.gas_compressibility > 2.0 {
            return Err(Error::invalid(
                "physical constants",
                format!("gas_compressibility = {} outside (0, 2]", self.gas_compressibility),
            ));
        }
        Ok(())
    }
}

/// Inputs of the choke equations at one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluidState {
    pub p1: f64,
    pub p2: f64,
    pub t1: f64,
    pub z: f64,
    pub w_g: f64,
    pub w_o: f64,
}

impl FluidState {
    pub fn w_w(&self) -> f64 {
        1.0 - self.w_g - self.w_o
    }

    pub fn validate(&self) -> Result<()> {
        let s = self;
        let ok = s.p1 > 0.0
            && s.p2 > 0.0
            && s.p1 >= s.p2
            && s.t1 > 0.0
            && (0.0..=1.0).contains(&s.z)
            && s.w_g >= 0.0
            && s.w_o >= 0.0
            && s.w_g + s.w_o <= 1.0 + 1e-12;
        if ok {
            Ok(())
        } else {
            Err(Error::domain("fluid_state", &[s.p1, s.p2, s.t1, s.z, s.w_g, s.w_o]))
        }
    }
}

/// Choke flow coefficient curve: linear interpolation through test points,
/// scaled by the shift factor `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCurve {
    pub test_points: Vec<(f64, f64)>,
    pub shift: f64,
}

impl CvCurve {
    pub fn new(test_points: Vec<(f64, f64)>, shift: f64) -> Result<Self> {
        let curve = CvCurve { test_points, shift };
        curve.validate()?;
        Ok(curve)
    }

    pub fn validate(&self) -> Result<()> {
        self.knots()?;
        if self.test_points.iter().any(|p| p.1 < 0.0 || !p.1.is_finite()) {
            return Err(Error::invalid("Cv curve", "test point Cv values must be nonnegative"));
        }
        Ok(())
    }

    pub fn knots(&self) -> Result<Knots> {
        Knots::new(&self.test_points)
    }

    /// Unshifted curve value at opening `z`, clamped outside the test range.
    pub fn base(&self, z: f64) -> f64 {
        let pts = &self.test_points;
        let last = pts.len() - 1;
        if z <= pts[0].0 {
            return pts[0].1;
        }
        if z >= pts[last].0 {
            return pts[last].1;
        }
        let i = pts.iter().rposition(|p| p.0 <= z).unwrap_or(0);
        let (z0, c0) = pts[i];
        let (z1, c1) = pts[i + 1];
        c0 + (c1 - c0) * (z - z0) / (z1 - z0)
    }
}

/// Cv at opening `z`: `a * Cv_base(z)`.
pub fn cv_interp(z: f64, curve: &CvCurve) -> Result<f64> {
    if curve.test_points.len() < 2 {
        return Err(Error::structural("Cv curve needs at least 2 test points"));
    }
    Ok(curve.shift * curve.base(z))
}

/// Ideal gas density `M_w p1 / (z_g R T1)` with `p1` in bar.
pub fn gas_density(p1: f64, t1: f64, c: &PhysicalConstants) -> Result<f64> {
    if !(t1 > 0.0) || !(p1 > 0.0) {
        return Err(Error::domain("gas_density", &[p1, t1]));
    }
    Ok(c.gas_molar_mass * p1 * BAR_TO_PA / (c.gas_compressibility * c.gas_constant * t1))
}

/// Homogeneous mixture density from mass fractions (harmonic mean).
pub fn mixture_density(w_g: f64, w_o: f64, rho_g: f64, rho_o: f64, rho_w: f64) -> Result<f64> {
    if !(rho_g > 0.0 && rho_o > 0.0 && rho_w > 0.0) {
        return Err(Error::domain("mixture_density", &[rho_g, rho_o, rho_w]));
    }
    let w_w = 1.0 - w_g - w_o;
    Ok(1.0 / (w_g / rho_g + w_o / rho_o + w_w / rho_w))
}

/// `Y² (p1 - p2)` written as `(1 - x_lim / (3 x_TP))² x_lim p1`, which stays
/// finite (and zero) at `p1 = p2`.
pub fn effective_dp_term(p1: f64, p2: f64, x_tp: f64) -> Result<f64> {
    if p2 > p1 || !(p2 > 0.0) {
        return Err(Error::domain("effective_dp_term", &[p1, p2]));
    }
    let x_p = (p1 - p2) / p1;
    let x_lim = x_p.min(x_tp);
    let k = 1.0 - x_lim / (3.0 * x_tp);
    Ok(k * k * x_lim * p1)
}

/// Mass flow through the choke [kg/h].
pub fn mass_flow(state: &FluidState, cv: f64, c: &PhysicalConstants, rho_o: f64, rho_w: f64) -> Result<f64> {
    state.validate()?;
    if cv < 0.0 {
        return Err(Error::domain("mass_flow", &[cv]));
    }
    let rho_g = gas_density(state.p1, state.t1, c)?;
    let rho_m = mixture_density(state.w_g, state.w_o, rho_g, rho_o, rho_w)?;
    let dp = effective_dp_term(state.p1, state.p2, c.x_tp)?;
    let radicand = dp * rho_m;
    debug_assert!(radicand >= 0.0);
    Ok(c.n_valve * cv * libm::sqrt(radicand))
}

/// Volumetric oil rate at standard conditions [Sm³/h].
pub fn oil_rate(mass_flow: f64, w_o: f64, rho_o_st: f64) -> f64 {
    w_o * mass_flow / rho_o_st
}

/// Graph builders mirroring the plain functions above.
///
/// Batched: every per-sample input is a `1 x n` node, learnable scalars are
/// `1 x 1` and broadcast.
pub mod graph {
    use alloc::sync::Arc;

    use super::*;
    use crate::autodiff::{Tape, Var};

    /// Per-sample choke inputs on a tape.
    #[derive(Debug, Clone, Copy)]
    pub struct StateVars {
        pub p1: Var,
        pub p2: Var,
        pub t1: Var,
        pub z: Var,
        pub w_g: Var,
        pub w_o: Var,
    }

    impl StateVars {
        /// Record a batch of states as constant rows.
        pub fn constants(tape: &mut Tape, states: &[FluidState]) -> Result<Self> {
            if states.is_empty() {
                return Err(Error::structural("empty batch of fluid states"));
            }
            let mut col = |f: fn(&FluidState) -> f64| {
                tape.constant(crate::tensor::Tensor::row(states.iter().map(f).collect()))
            };
            Ok(StateVars {
                p1: col(|s| s.p1),
                p2: col(|s| s.p2),
                t1: col(|s| s.t1),
                z: col(|s| s.z),
                w_g: col(|s| s.w_g),
                w_o: col(|s| s.w_o),
            })
        }
    }

    pub fn gas_density(tape: &mut Tape, p1: Var, t1: Var, c: &PhysicalConstants) -> Result<Var> {
        if tape.value(t1).as_slice().iter().any(|&t| !(t > 0.0)) {
            let bad = tape.value(t1).as_slice().iter().copied().find(|t| !(*t > 0.0));
            return Err(Error::domain("gas_density", &[bad.unwrap_or(f64::NAN)]));
        }
        let factor = c.gas_molar_mass * BAR_TO_PA / (c.gas_compressibility * c.gas_constant);
        let num = tape.scale(p1, factor)?;
        tape.div(num, t1)
    }

    pub fn mixture_density(
        tape: &mut Tape,
        w_g: Var,
        w_o: Var,
        rho_g: Var,
        rho_o: Var,
        rho_w: Var,
    ) -> Result<Var> {
        let one = tape.scalar(1.0);
        let liquid = tape.add(w_g, w_o)?;
        let w_w = tape.sub(one, liquid)?;
        let g = tape.div(w_g, rho_g)?;
        let o = tape.div(w_o, rho_o)?;
        let w = tape.div(w_w, rho_w)?;
        let go = tape.add(g, o)?;
        let specific_volume = tape.add(go, w)?;
        tape.div(one, specific_volume)
    }

    pub fn effective_dp_term(tape: &mut Tape, p1: Var, p2: Var, x_tp: f64) -> Result<Var> {
        {
            let (a, b) = (tape.value(p1).as_slice(), tape.value(p2).as_slice());
            let n = a.len().max(b.len());
            let pick = |s: &[f64], i: usize| if s.len() == 1 { s[0] } else { s[i] };
            if let Some(i) = (0..n).find(|&i| pick(b, i) > pick(a, i)) {
                return Err(Error::domain("effective_dp_term", &[pick(a, i), pick(b, i)]));
            }
        }
        let dp = tape.sub(p1, p2)?;
        let x_p = tape.div(dp, p1)?;
        let x_tp_node = tape.scalar(x_tp);
        // x_TP first: at x_P = x_TP the tie rule routes the adjoint to the
        // constant, so the boundary counts as choked (zero dp2 sensitivity).
        let x_lim = tape.min(x_tp_node, x_p)?;
        let k = tape.scale(x_lim, -1.0 / (3.0 * x_tp))?;
        let k = tape.shift(k, 1.0)?;
        let k2 = tape.square(k)?;
        let xp1 = tape.mul(x_lim, p1)?;
        tape.mul(k2, xp1)
    }

    pub fn mass_flow(
        tape: &mut Tape,
        state: &StateVars,
        cv: Var,
        c: &PhysicalConstants,
        rho_o: Var,
        rho_w: Var,
    ) -> Result<Var> {
        let rho_g = gas_density(tape, state.p1, state.t1, c)?;
        let rho_m = mixture_density(tape, state.w_g, state.w_o, rho_g, rho_o, rho_w)?;
        let dp = effective_dp_term(tape, state.p1, state.p2, c.x_tp)?;
        let radicand = tape.mul(dp, rho_m)?;
        let root = tape.sqrt(radicand)?;
        let flow = tape.mul(cv, root)?;
        tape.scale(flow, c.n_valve)
    }

    pub fn oil_rate(tape: &mut Tape, mass_flow: Var, w_o: Var, rho_o_st: f64) -> Result<Var> {
        let oil = tape.mul(w_o, mass_flow)?;
        tape.scale(oil, 1.0 / rho_o_st)
    }

    /// `a * Cv_base(z)` with the shift `a` as a (usually learnable) node.
    pub fn cv_interp(tape: &mut Tape, z: Var, knots: Arc<Knots>, shift: Var) -> Result<Var> {
        let base = tape.interp(z, knots)?;
        tape.mul(shift, base)
    }
}
