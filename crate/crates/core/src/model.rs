//! The three model kinds behind one predict interface.
//!
//! | kind | learnable                | inputs                          |
//! |------|--------------------------|---------------------------------|
//! | M    | ρ_o, ρ_w, a              | p1, p2, T1, z, w_g, w_o         |
//! | H    | ρ_o, ρ_w, MLP Cv(z, w)   | p1, p2, T1, z, w_g, w_o         |
//! | DD   | MLP                      | p1, p2, T1, T2, z, w_g, w_o     |
//!
//! Learnable tensors are always ordered as physical scalars first (in the
//! order of the table) followed by the network's `[W_0, b_0, W_1, ...]`.

use alloc::format;
use alloc::sync::Arc;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Knots, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{InputScaler, Mlp, MlpVars, OutputActivation};
use crate::physics::{self, graph, FluidState, PhysicalConstants};
use crate::pipeline::SteadySample;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    M,
    H,
    DD,
}

const PHYSICS_INPUTS: [&str; 6] = ["p1", "p2", "T1", "z", "w_g", "w_o"];
const DD_INPUTS: [&str; 7] = ["p1", "p2", "T1", "T2", "z", "w_g", "w_o"];

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::M, ModelKind::H, ModelKind::DD];

    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::M => "m",
            ModelKind::H => "h",
            ModelKind::DD => "dd",
        }
    }

    /// Names of the input vector this kind consumes, in order.
    pub fn input_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::M | ModelKind::H => &PHYSICS_INPUTS,
            ModelKind::DD => &DD_INPUTS,
        }
    }

    pub fn physical_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::M => &["rho_o", "rho_w", "a"],
            ModelKind::H => &["rho_o", "rho_w"],
            ModelKind::DD => &[],
        }
    }

    pub fn has_network(self) -> bool {
        self != ModelKind::M
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m" => Ok(ModelKind::M),
            "h" => Ok(ModelKind::H),
            "dd" => Ok(ModelKind::DD),
            _ => Err(Error::invalid("model kind", format!("`{s}` (expected m, h or dd)"))),
        }
    }
}

/// Which mass fractions feed the models.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FractionMode {
    /// Periodically updated averages, as available in operation.
    #[default]
    Scheduled,
    /// Instantaneous fractions from each sample's own rates.
    Continuous,
}

/// Gaussian prior of a physical parameter together with its plausible range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundedPrior {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl BoundedPrior {
    /// A quarter of the plausible range, so the bounds sit at ±2σ.
    pub fn sigma(&self) -> f64 {
        (self.upper - self.lower) / 4.0
    }

    pub fn validate(&self, name: &'static str) -> Result<()> {
        if !(self.lower < self.upper) || !(self.lower..=self.upper).contains(&self.mean) {
            return Err(Error::invalid(name, format!("{self:?}: need lower < upper and mean within")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub rho_o: BoundedPrior,
    pub rho_w: BoundedPrior,
    pub a: BoundedPrior,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            rho_o: BoundedPrior {
                mean: 850.0,
                lower: 700.0,
                upper: 1000.0,
            },
            rho_w: BoundedPrior {
                mean: 1025.0,
                lower: 975.0,
                upper: 1075.0,
            },
            a: BoundedPrior {
                mean: 1.0,
                lower: 0.5,
                upper: 1.5,
            },
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        self.rho_o.validate("rho_o prior")?;
        self.rho_w.validate("rho_w prior")?;
        self.a.validate("a prior")?;
        if self.rho_o.lower <= 0.0 || self.rho_w.lower <= 0.0 || self.a.lower <= 0.0 {
            return Err(Error::invalid("priors", "density and shift bounds must be positive"));
        }
        Ok(())
    }

    fn get(&self, name: &str) -> BoundedPrior {
        match name {
            "rho_o" => self.rho_o,
            "rho_w" => self.rho_w,
            "a" => self.a,
            _ => unreachable!("unknown physical parameter {name}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParam {
    pub name: String,
    pub value: f64,
    pub prior: BoundedPrior,
}

/// Everything a model learns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub physical: Vec<PhysicalParam>,
    pub network: Option<Mlp>,
}

impl ParameterSet {
    pub fn physical_value(&self, name: &str) -> Option<f64> {
        self.physical.iter().find(|p| p.name == name).map(|p| p.value)
    }
}

/// Counts of learnable physical versus network parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HybridityReport {
    pub kind: ModelKind,
    pub physical: Vec<String>,
    pub network_params: usize,
}

impl fmt::Display for HybridityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} physical [{}], {} network",
            self.kind,
            self.physical.len(),
            self.physical.join(", "),
            self.network_params
        )
    }
}

/// Construction options shared by all kinds; fields irrelevant to a kind are
/// ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    pub kind: ModelKind,
    pub constants: PhysicalConstants,
    pub priors: PriorConfig,
    /// Valve test points `(z, Cv)` of the M-model's interpolated curve.
    pub cv_points: Vec<(f64, f64)>,
    pub width: usize,
    pub depth: usize,
    pub seed: u64,
    pub fractions: FractionMode,
}

impl ModelOptions {
    pub fn new(kind: ModelKind) -> Self {
        let (width, depth) = match kind {
            ModelKind::DD => (70, 2),
            _ => (20, 2),
        };
        ModelOptions {
            kind,
            constants: PhysicalConstants::default(),
            priors: PriorConfig::default(),
            cv_points: Vec::new(),
            width,
            depth,
            seed: 0,
            fractions: FractionMode::default(),
        }
    }
}

/// One model: kind, constants, learnable parameters and the statistics used
/// to normalize network inputs and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAssembly {
    pub kind: ModelKind,
    pub constants: PhysicalConstants,
    pub params: ParameterSet,
    /// M only.
    pub cv_points: Option<Vec<(f64, f64)>>,
    /// H and DD: standardization of the network inputs.
    pub scaler: Option<InputScaler>,
    /// Network output mapping. H: `Cv = output_scale * softplus(net)`;
    /// DD: `Q_o = output_offset + output_scale * net`.
    pub output_scale: f64,
    pub output_offset: f64,
    pub fractions: FractionMode,
    #[serde(skip)]
    knots: Option<Arc<Knots>>,
}

/// Input vector of `kind` for one sample, ordered as
/// [`ModelKind::input_names`].
pub fn input_vector(kind: ModelKind, s: &SteadySample, mode: FractionMode) -> Vec<f64> {
    let (w_g, w_o) = match mode {
        FractionMode::Scheduled => (s.w_g_sched, s.w_o_sched),
        FractionMode::Continuous => (s.w_g, s.w_o),
    };
    match kind {
        ModelKind::M | ModelKind::H => alloc::vec![s.p1, s.p2, s.t1, s.z, w_g, w_o],
        ModelKind::DD => alloc::vec![s.p1, s.p2, s.t1, s.t2, s.z, w_g, w_o],
    }
}

fn state_of(row: &[f64]) -> FluidState {
    FluidState {
        p1: row[0],
        p2: row[1],
        t1: row[2],
        z: row[3],
        w_g: row[4],
        w_o: row[5],
    }
}

fn h_features(row: &[f64]) -> Vec<f64> {
    alloc::vec![row[3], row[4], row[5]]
}

impl ModelAssembly {
    /// Build a model and fit its normalization statistics on `training`.
    pub fn new(opts: &ModelOptions, training: &[SteadySample]) -> Result<Self> {
        opts.constants.validate()?;
        opts.priors.validate()?;
        let kind = opts.kind;
        if kind.has_network() && training.is_empty() {
            return Err(Error::structural("network models need training samples to fit the scaler"));
        }
        let physical = kind
            .physical_names()
            .iter()
            .map(|&name| {
                let prior = opts.priors.get(name);
                PhysicalParam {
                    name: name.to_string(),
                    value: prior.mean,
                    prior,
                }
            })
            .collect();
        let rows: Vec<Vec<f64>> = training.iter().map(|s| input_vector(kind, s, opts.fractions)).collect();

        let mut model = ModelAssembly {
            kind,
            constants: opts.constants.clone(),
            params: ParameterSet {
                physical,
                network: None,
            },
            cv_points: None,
            scaler: None,
            output_scale: 1.0,
            output_offset: 0.0,
            fractions: opts.fractions,
            knots: None,
        };
        match kind {
            ModelKind::M => {
                physics::CvCurve::new(opts.cv_points.clone(), 1.0)?;
                model.cv_points = Some(opts.cv_points.clone());
            }
            ModelKind::H => {
                let feats: Vec<Vec<f64>> = rows.iter().map(|r| h_features(r)).collect();
                model.scaler = Some(InputScaler::fit(&feats)?);
                model.params.network = Some(Mlp::init(
                    &layer_widths(3, opts.width, opts.depth),
                    OutputActivation::Softplus,
                    opts.seed,
                )?);
                model.output_scale = pseudo_cv_scale(&rows, training, &opts.constants, &opts.priors);
            }
            ModelKind::DD => {
                model.scaler = Some(InputScaler::fit(&rows)?);
                model.params.network = Some(Mlp::init(
                    &layer_widths(7, opts.width, opts.depth),
                    OutputActivation::Identity,
                    opts.seed,
                )?);
                let y: Vec<f64> = training.iter().map(|s| s.q_o).collect();
                let n = y.len() as f64;
                let mean = y.iter().sum::<f64>() / n;
                let sd = libm::sqrt(y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n);
                model.output_offset = mean;
                model.output_scale = if sd > 1e-12 { sd } else { 1.0 };
            }
        }
        model.refresh()?;
        Ok(model)
    }

    /// Rebuild derived state after deserialization.
    pub fn refresh(&mut self) -> Result<()> {
        self.knots = match &self.cv_points {
            Some(points) => Some(Arc::new(Knots::new(points)?)),
            None => None,
        };
        self.check_layout()
    }

    fn check_layout(&self) -> Result<()> {
        let names: Vec<&str> = self.params.physical.iter().map(|p| p.name.as_str()).collect();
        if names != self.kind.physical_names() {
            return Err(Error::structural(format!(
                "{} model has physical parameters {names:?}",
                self.kind
            )));
        }
        let dims = match self.kind {
            ModelKind::M => None,
            ModelKind::H => Some(3),
            ModelKind::DD => Some(7),
        };
        match (dims, &self.params.network, &self.scaler) {
            (None, None, None) if self.cv_points.is_some() => Ok(()),
            (Some(d), Some(net), Some(scaler)) if net.input_dim() == d && scaler.dim() == d => Ok(()),
            _ => Err(Error::structural(format!("inconsistent {} model layout", self.kind))),
        }
    }

    pub fn hybridity(&self) -> HybridityReport {
        HybridityReport {
            kind: self.kind,
            physical: self.params.physical.iter().map(|p| p.name.clone()).collect(),
            network_params: self.params.network.as_ref().map_or(0, |n| n.param_count()),
        }
    }

    /// Learnable tensors in canonical order.
    pub fn param_tensors(&self) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = self.params.physical.iter().map(|p| Tensor::scalar(p.value)).collect();
        if let Some(net) = &self.params.network {
            out.extend(net.tensors().into_iter().cloned());
        }
        out
    }

    pub fn set_param_tensors(&mut self, tensors: &[Tensor]) -> Result<()> {
        let k = self.params.physical.len();
        if tensors.len() < k || tensors[..k].iter().any(|t| !t.is_scalar()) {
            return Err(Error::structural("physical parameters must be leading scalars"));
        }
        match &mut self.params.network {
            Some(net) => net.set_tensors(&tensors[k..])?,
            None if tensors.len() == k => {}
            None => return Err(Error::structural("too many parameter tensors")),
        }
        for (p, t) in self.params.physical.iter_mut().zip(tensors) {
            p.value = t.item();
        }
        Ok(())
    }

    /// Physical parameters outside their plausible range: `(name, value)`.
    pub fn bound_violations(&self) -> Vec<(String, f64)> {
        self.params
            .physical
            .iter()
            .filter(|p| !(p.prior.lower..=p.prior.upper).contains(&p.value))
            .map(|p| (p.name.clone(), p.value))
            .collect()
    }

    /// Record the learnable parameters on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.param_tensors().into_iter().map(|t| tape.param(t)).collect()
    }

    pub fn rows(&self, samples: &[SteadySample]) -> Vec<Vec<f64>> {
        samples.iter().map(|s| input_vector(self.kind, s, self.fractions)).collect()
    }

    /// Estimated oil rates for `samples` as a `1 x n` node, using parameter
    /// leaves from [`ModelAssembly::bind`].
    pub fn forward(&self, tape: &mut Tape, params: &[Var], samples: &[SteadySample]) -> Result<Var> {
        let rows = self.rows(samples);
        self.forward_rows(tape, params, &rows)
    }

    /// Like [`ModelAssembly::forward`] on raw input vectors ordered as
    /// [`ModelKind::input_names`].
    pub fn forward_rows(&self, tape: &mut Tape, params: &[Var], rows: &[Vec<f64>]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::structural("empty batch"));
        }
        let expected = self.param_tensors().len();
        if params.len() != expected {
            return Err(Error::structural(format!("expected {expected} parameter leaves, got {}", params.len())));
        }
        let dim = self.kind.input_names().len();
        if let Some(i) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::structural(format!("row {i}: {} model takes {dim} inputs", self.kind)));
        }
        match self.kind {
            ModelKind::M => {
                let knots = self.knots.clone().ok_or_else(|| Error::structural("M model without Cv curve"))?;
                let state = self.state_vars(tape, rows)?;
                let cv = graph::cv_interp(tape, state.z, knots, params[2])?;
                self.physics_head(tape, &state, cv, params[0], params[1])
            }
            ModelKind::H => {
                let state = self.state_vars(tape, rows)?;
                let feats: Vec<Vec<f64>> = rows.iter().map(|r| h_features(r)).collect();
                let raw = self.network_out(tape, &params[2..], &feats)?;
                let cv = tape.scale(raw, self.output_scale)?;
                self.physics_head(tape, &state, cv, params[0], params[1])
            }
            ModelKind::DD => {
                let raw = self.network_out(tape, params, rows)?;
                let scaled = tape.scale(raw, self.output_scale)?;
                tape.shift(scaled, self.output_offset)
            }
        }
    }

    fn state_vars(&self, tape: &mut Tape, rows: &[Vec<f64>]) -> Result<graph::StateVars> {
        let states: Vec<FluidState> = rows.iter().map(|r| state_of(r)).collect();
        for (i, s) in states.iter().enumerate() {
            s.validate().map_err(|e| e.at_sample(i))?;
        }
        graph::StateVars::constants(tape, &states)
    }

    fn physics_head(&self, tape: &mut Tape, state: &graph::StateVars, cv: Var, rho_o: Var, rho_w: Var) -> Result<Var> {
        let m = graph::mass_flow(tape, state, cv, &self.constants, rho_o, rho_w)?;
        graph::oil_rate(tape, m, state.w_o, self.constants.rho_o_st)
    }

    fn network_out(&self, tape: &mut Tape, net_params: &[Var], feats: &[Vec<f64>]) -> Result<Var> {
        let net = self.params.network.as_ref().ok_or_else(|| Error::structural("missing network"))?;
        let scaler = self.scaler.as_ref().ok_or_else(|| Error::structural("missing input scaler"))?;
        let vars = MlpVars {
            layers: net_params.chunks(2).map(|c| (c[0], c[1])).collect(),
        };
        let x = tape.constant(scaler.transform_columns(feats)?);
        net.forward(tape, &vars, x)
    }

    /// Estimated oil rate node for `samples` on a fresh binding of the
    /// parameters.
    pub fn predict_node(&self, tape: &mut Tape, samples: &[SteadySample]) -> Result<Var> {
        let params = self.bind(tape);
        self.forward(tape, &params, samples)
    }

    /// Estimated oil rates [Sm³/h].
    pub fn predict(&self, samples: &[SteadySample]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let out = self.predict_node(&mut tape, samples)?;
        Ok(tape.value(out).as_slice().to_vec())
    }

    /// Predict from named input columns. The names must equal this kind's
    /// inputs exactly, so e.g. a DD model fed without `T2` is rejected.
    pub fn predict_named(&self, names: &[&str], rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        if names != self.kind.input_names() {
            return Err(Error::structural(format!(
                "{} model takes inputs {:?}, got {names:?}",
                self.kind,
                self.kind.input_names()
            )));
        }
        let mut tape = Tape::new();
        let params = self.bind(&mut tape);
        let out = self.forward_rows(&mut tape, &params, rows)?;
        Ok(tape.value(out).as_slice().to_vec())
    }

    /// Effective `Cv` as the model sees it at `(z, w_g, w_o)`. `None` for DD.
    pub fn cv_at(&self, z: f64, w_g: f64, w_o: f64) -> Result<Option<f64>> {
        match self.kind {
            ModelKind::M => {
                let curve = physics::CvCurve::new(self.cv_points.clone().unwrap_or_default(), self.params.physical[2].value)?;
                physics::cv_interp(z, &curve).map(Some)
            }
            ModelKind::H => {
                let net = self.params.network.as_ref().ok_or_else(|| Error::structural("missing network"))?;
                let scaler = self.scaler.as_ref().ok_or_else(|| Error::structural("missing input scaler"))?;
                let x = scaler.transform_columns(&[alloc::vec![z, w_g, w_o]])?;
                Ok(Some(self.output_scale * net.predict(&x)?.as_slice()[0]))
            }
            ModelKind::DD => Ok(None),
        }
    }
}

/// `[input, width × depth, 1]`.
pub fn layer_widths(input: usize, width: usize, depth: usize) -> Vec<usize> {
    let mut w = alloc::vec![input];
    w.extend(core::iter::repeat_n(width, depth));
    w.push(1);
    w
}

/// Typical `Cv` implied by the measured oil rates under the prior-mean
/// densities. Sets the output scale of the H-model's Cv network so the
/// network itself works with order-one values.
fn pseudo_cv_scale(rows: &[Vec<f64>], samples: &[SteadySample], c: &PhysicalConstants, priors: &PriorConfig) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (row, s) in rows.iter().zip(samples) {
        let state = state_of(row);
        let Ok(unit) = physics::mass_flow(&state, 1.0, c, priors.rho_o.mean, priors.rho_w.mean) else {
            continue;
        };
        let q_per_cv = physics::oil_rate(unit, state.w_o, c.rho_o_st);
        if q_per_cv > 1e-9 && s.q_o > 0.0 {
            let cv = s.q_o / q_per_cv;
            if cv.is_finite() {
                sum += cv;
                count += 1;
            }
        }
    }
    if count == 0 || !(sum > 0.0) {
        1.0
    } else {
        sum / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cv_points() -> Vec<(f64, f64)> {
        vec![(0.0, 0.0), (0.5, 60.0), (1.0, 200.0)]
    }

    fn sample(p1: f64, p2: f64, z: f64, w_g: f64, w_o: f64, q_o: f64) -> SteadySample {
        SteadySample {
            start: 0,
            end: 1,
            records: 1,
            p1,
            p2,
            t1: 340.0,
            t2: 335.0,
            z,
            q_g: 0.0,
            q_o,
            q_w: 0.0,
            w_g,
            w_o,
            w_g_sched: w_g,
            w_o_sched: w_o,
        }
    }

    fn random_samples(n: usize, seed: u64) -> Vec<SteadySample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let p1 = rng.random_range(25.0..60.0);
                let w_g = rng.random_range(0.01..0.2);
                let w_o = rng.random_range(0.3..0.7);
                let mut s = sample(p1, rng.random_range(12.0..22.0), rng.random_range(0.1..1.0), w_g, w_o, 100.0);
                s.t1 = rng.random_range(330.0..360.0);
                s
            })
            .collect()
    }

    fn m_model() -> ModelAssembly {
        let mut opts = ModelOptions::new(ModelKind::M);
        opts.cv_points = cv_points();
        ModelAssembly::new(&opts, &[]).unwrap()
    }

    #[test]
    fn m_model_zero_cv_gives_zero_rate() {
        let m = m_model();
        let q = m.predict(&[sample(40.0, 20.0, 0.0, 0.1, 0.6, 0.0)]).unwrap();
        assert_eq!(q, vec![0.0]);
    }

    #[test]
    fn m_model_composes_the_physics() {
        let m = m_model();
        let s = sample(40.0, 20.0, 0.4, 0.1, 0.6, 0.0);
        let state = s.fluid_state(true);
        let cv = 48.0; // 0.4 of the way 0 → 60 on the first segment, a = 1
        let flow = physics::mass_flow(&state, cv, &m.constants, 850.0, 1025.0).unwrap();
        let expected = physics::oil_rate(flow, 0.6, 850.0);
        assert_relative_eq!(m.predict(&[s]).unwrap()[0], expected, max_relative = 1e-13);
    }

    #[test]
    fn worked_oil_rate() {
        let q = physics::oil_rate(1.1463e5, 0.8, 850.0);
        assert_relative_eq!(q, 107.9, max_relative = 1e-3);
    }

    #[test]
    fn hybridity_counts() {
        let samples = random_samples(30, 3);
        assert_eq!(m_model().hybridity().physical.len(), 3);
        assert_eq!(m_model().hybridity().network_params, 0);
        let h = ModelAssembly::new(&ModelOptions::new(ModelKind::H), &samples).unwrap();
        assert_eq!(h.hybridity().physical, vec!["rho_o", "rho_w"]);
        assert_eq!(h.hybridity().network_params, 521);
        let dd = ModelAssembly::new(&ModelOptions::new(ModelKind::DD), &samples).unwrap();
        assert!(dd.hybridity().physical.is_empty());
        assert!(dd.hybridity().network_params > 0);
    }

    #[test]
    fn table_one_inputs_are_enforced() {
        let samples = random_samples(30, 4);
        let dd = ModelAssembly::new(&ModelOptions::new(ModelKind::DD), &samples).unwrap();
        let without_t2: Vec<Vec<f64>> = samples.iter().map(|s| input_vector(ModelKind::M, s, FractionMode::Scheduled)).collect();
        assert!(dd.predict_named(&PHYSICS_INPUTS, &without_t2).is_err());
        let with_t2: Vec<Vec<f64>> = samples.iter().map(|s| input_vector(ModelKind::DD, s, FractionMode::Scheduled)).collect();
        assert!(dd.predict_named(&DD_INPUTS, &with_t2).is_ok());
        let m = m_model();
        assert!(m.predict_named(&DD_INPUTS, &with_t2).is_err());
        assert!(m.predict_named(&PHYSICS_INPUTS, &without_t2).is_ok());
    }

    #[test]
    fn frozen_constant_network_matches_m_model() {
        let samples = random_samples(100, 5);
        let mut h = ModelAssembly::new(&ModelOptions::new(ModelKind::H), &samples).unwrap();
        let c = 37.5;
        let net = h.params.network.as_mut().unwrap();
        for w in net.weights_mut() {
            w.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        }
        // softplus(b) = c / scale
        let target = c / h.output_scale;
        let b = libm::log(libm::expm1(target));
        let last = net.biases_mut().len() - 1;
        net.biases_mut()[last].as_mut_slice()[0] = b;

        let mut opts = ModelOptions::new(ModelKind::M);
        opts.cv_points = vec![(0.0, c), (1.0, c)];
        let m = ModelAssembly::new(&opts, &[]).unwrap();
        let qh = h.predict(&samples).unwrap();
        let qm = m.predict(&samples).unwrap();
        for (a, b) in qh.iter().zip(&qm) {
            assert_relative_eq!(*a, *b, max_relative = 1e-12);
        }
    }

    #[test]
    fn predict_is_deterministic_and_batch_independent() {
        let samples = random_samples(20, 6);
        let dd = ModelAssembly::new(&ModelOptions::new(ModelKind::DD), &samples).unwrap();
        let all = dd.predict(&samples).unwrap();
        assert_eq!(all, dd.predict(&samples).unwrap());
        for (i, s) in samples.iter().enumerate() {
            assert_relative_eq!(dd.predict(&[*s]).unwrap()[0], all[i], max_relative = 1e-12);
        }
    }

    #[test]
    fn domain_errors_name_the_sample() {
        let m = m_model();
        let good = sample(40.0, 20.0, 0.4, 0.1, 0.6, 0.0);
        let bad = sample(20.0, 40.0, 0.4, 0.1, 0.6, 0.0);
        match m.predict(&[good, bad]) {
            Err(Error::Sample { index: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parameter_round_trip() {
        let samples = random_samples(10, 7);
        let mut h = ModelAssembly::new(&ModelOptions::new(ModelKind::H), &samples).unwrap();
        let mut t = h.param_tensors();
        t[0] = Tensor::scalar(812.0);
        h.set_param_tensors(&t).unwrap();
        assert_eq!(h.params.physical_value("rho_o"), Some(812.0));
        assert_eq!(h.param_tensors(), t);
        assert!(h.set_param_tensors(&t[..3]).is_err());
    }

    #[test]
    fn bounds_are_reported_not_enforced() {
        let mut m = m_model();
        let mut t = m.param_tensors();
        t[2] = Tensor::scalar(2.0);
        m.set_param_tensors(&t).unwrap();
        assert_eq!(m.bound_violations(), vec![("a".to_string(), 2.0)]);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("DD".parse::<ModelKind>().unwrap(), ModelKind::DD);
        assert!("x".parse::<ModelKind>().is_err());
        assert_eq!(layer_widths(3, 20, 2), vec![3, 20, 20, 1]);
    }
}
