//! Regularized least squares with minibatch SGD or Adam.
//!
//! The objective for a batch of `n` samples is
//!
//! ```text
//! J = 1/n Σ_i (y_i - f(x_i; θ))²  +  1/n Σ_j λ_j (θ_j - μ_j)²
//! ```
//!
//! Physical parameters get `λ_j = σ_ε² / σ_j²` from their Gaussian prior,
//! network weights and biases get `λ_nn` with `μ = 0`. Note that both terms
//! carry the `1/n`, so the effective prior strength depends on the batch
//! size.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{ModelAssembly, ModelKind};
use crate::pipeline::{SteadySample, WellDataset};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Measurement noise standard deviation; required when the model has
    /// physical parameters.
    #[serde(default)]
    pub sigma_eps: Option<f64>,
    #[serde(default)]
    pub lambda_nn: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default)]
    pub seed: u64,
    /// Hidden layer width and count of the network kinds.
    #[serde(default)]
    pub width: usize,
    #[serde(default)]
    pub depth: usize,
    /// Keep a parameter snapshot every this many epochs; 0 keeps none.
    #[serde(default)]
    pub snapshot_every: usize,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_adam_eps() -> f64 {
    1e-8
}

impl TrainConfig {
    fn base(epochs: usize, batch_size: usize) -> Self {
        TrainConfig {
            epochs,
            batch_size,
            learning_rate: 0.01,
            sigma_eps: None,
            lambda_nn: 0.0,
            optimizer: Optimizer::Adam,
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            seed: 0,
            width: 0,
            depth: 0,
            snapshot_every: 0,
        }
    }

    pub fn table2_m() -> Self {
        TrainConfig {
            sigma_eps: Some(25.0),
            ..Self::base(5000, 150)
        }
    }

    pub fn table2_h() -> Self {
        TrainConfig {
            sigma_eps: Some(10.0),
            lambda_nn: 0.01,
            width: 20,
            depth: 2,
            ..Self::base(2000, 32)
        }
    }

    pub fn table2_dd() -> Self {
        TrainConfig {
            lambda_nn: 0.001,
            width: 70,
            depth: 2,
            ..Self::base(2000, 150)
        }
    }

    pub fn for_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::M => Self::table2_m(),
            ModelKind::H => Self::table2_h(),
            ModelKind::DD => Self::table2_dd(),
        }
    }

    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("training config", reason));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(self.lambda_nn >= 0.0) {
            return bad(format!("lambda_nn {} must be nonnegative", self.lambda_nn));
        }
        if !kind.physical_names().is_empty() && !self.sigma_eps.is_some_and(|s| s > 0.0) {
            return bad(format!("{kind} model needs sigma_eps > 0"));
        }
        if kind.has_network() && (self.width == 0 || self.depth == 0) {
            return bad(format!("{kind} model needs nonzero width and depth"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam needs betas in [0, 1) and eps > 0".into());
        }
        Ok(())
    }
}

/// `σ_ε² / σ_i²`, the regularization factor implied by a Gaussian prior.
pub fn compute_lambda(sigma_eps: f64, sigma_i: f64) -> Result<f64> {
    if !(sigma_eps > 0.0 && sigma_i > 0.0) {
        return Err(Error::domain("compute_lambda", &[sigma_eps, sigma_i]));
    }
    Ok((sigma_eps * sigma_eps) / (sigma_i * sigma_i))
}

/// One learnable tensor with its regularization.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub value: Tensor,
    pub lambda: f64,
    pub mean: f64,
}

/// Anything [`train`] can fit.
pub trait Trainable {
    type Sample: Clone;

    /// Current parameters with their regularization, in a fixed order.
    fn param_blocks(&self, cfg: &TrainConfig) -> Result<Vec<ParamBlock>>;

    fn set_param_values(&mut self, values: &[Tensor]) -> Result<()>;

    /// Estimates for `batch` as a `1 x n` node.
    fn forward(&self, tape: &mut Tape, params: &[Var], batch: &[Self::Sample]) -> Result<Var>;

    fn target(&self, sample: &Self::Sample) -> f64;
}

impl Trainable for ModelAssembly {
    type Sample = SteadySample;

    fn param_blocks(&self, cfg: &TrainConfig) -> Result<Vec<ParamBlock>> {
        let mut blocks = Vec::new();
        for p in &self.params.physical {
            let sigma_eps = cfg
                .sigma_eps
                .ok_or_else(|| Error::invalid("training config", "sigma_eps is required for physical parameters"))?;
            blocks.push(ParamBlock {
                name: p.name.clone(),
                value: Tensor::scalar(p.value),
                lambda: compute_lambda(sigma_eps, p.prior.sigma())?,
                mean: p.prior.mean,
            });
        }
        if let Some(net) = &self.params.network {
            for (i, t) in net.tensors().into_iter().enumerate() {
                let kind = if i % 2 == 0 { "W" } else { "b" };
                blocks.push(ParamBlock {
                    name: format!("{kind}{}", i / 2),
                    value: t.clone(),
                    lambda: cfg.lambda_nn,
                    mean: 0.0,
                });
            }
        }
        Ok(blocks)
    }

    fn set_param_values(&mut self, values: &[Tensor]) -> Result<()> {
        self.set_param_tensors(values)
    }

    fn forward(&self, tape: &mut Tape, params: &[Var], batch: &[SteadySample]) -> Result<Var> {
        ModelAssembly::forward(self, tape, params, batch)
    }

    fn target(&self, sample: &SteadySample) -> f64 {
        sample.q_o
    }
}

/// The batch objective `J` as a scalar node.
pub fn loss(tape: &mut Tape, estimate: Var, y: &[f64], params: &[Var], blocks: &[ParamBlock]) -> Result<Var> {
    if y.is_empty() {
        return Err(Error::structural("loss of an empty batch"));
    }
    if tape.value(estimate).shape() != (1, y.len()) {
        return Err(Error::structural(format!(
            "estimates have shape {:?}, expected 1x{}",
            tape.value(estimate).shape(),
            y.len()
        )));
    }
    if params.len() != blocks.len() {
        return Err(Error::structural("one regularization block per parameter"));
    }
    let n = y.len() as f64;
    let target = tape.constant(Tensor::row(y.to_vec()));
    let residual = tape.sub(target, estimate)?;
    let squared = tape.square(residual)?;
    let mut total = tape.mean(squared)?;
    let mut penalty: Option<Var> = None;
    for (&p, block) in params.iter().zip(blocks) {
        if block.lambda == 0.0 {
            continue;
        }
        let centred = tape.shift(p, -block.mean)?;
        let sq = tape.square(centred)?;
        let s = tape.sum(sq)?;
        let weighted = tape.scale(s, block.lambda)?;
        penalty = Some(match penalty {
            Some(acc) => tape.add(acc, weighted)?,
            None => weighted,
        });
    }
    if let Some(pen) = penalty {
        let pen = tape.scale(pen, 1.0 / n)?;
        total = tape.add(total, pen)?;
    }
    Ok(total)
}

fn check_grads(theta: &[Tensor], grads: &[Tensor]) -> Result<()> {
    if theta.len() != grads.len() || theta.iter().zip(grads).any(|(t, g)| t.shape() != g.shape()) {
        return Err(Error::structural("gradient and parameter shapes differ"));
    }
    Ok(())
}

/// `θ ← θ - α g`.
pub fn sgd_step(theta: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
    check_grads(theta, grads)?;
    for (t, g) in theta.iter_mut().zip(grads) {
        for (v, d) in t.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *v -= lr * d;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        AdamParams {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }
}

/// Moment estimates of Adam, one pair per parameter tensor. Unused by SGD
/// apart from the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(theta: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = theta.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        OptimizerState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(state: &mut OptimizerState, theta: &mut [Tensor], grads: &[Tensor], p: AdamParams) -> Result<()> {
    check_grads(theta, grads)?;
    if state.m.len() != theta.len() || state.m.iter().zip(theta.iter()).any(|(m, t)| m.shape() != t.shape()) {
        return Err(Error::structural("optimizer state does not match the parameters"));
    }
    state.step += 1;
    let k = state.step as i32;
    let c1 = 1.0 - libm::pow(p.beta1, k as f64);
    let c2 = 1.0 - libm::pow(p.beta2, k as f64);
    for (((t, g), m), v) in theta.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let (t, g, m, v) = (t.as_mut_slice(), g.as_slice(), m.as_mut_slice(), v.as_mut_slice());
        for i in 0..t.len() {
            m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * g[i];
            v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            t[i] -= p.lr * m_hat / (libm::sqrt(v_hat) + p.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Batch-size weighted mean of the batch objectives.
    pub train_loss: f64,
    pub val_rmse: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// `(epoch, parameters after that epoch)`.
    pub snapshots: Vec<(usize, Vec<Tensor>)>,
}

fn slope(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = values.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in values.iter().enumerate() {
        let dx = i as f64 - x_mean;
        sxy += dx * (y - y_mean);
        sxx += dx * dx;
    }
    sxy / sxx
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Over the last tenth of the epochs (at least two), validation RMSE
    /// trends up while the training loss trends down. Trends are
    /// least-squares slopes, since minibatch noise makes epoch-to-epoch
    /// monotonicity meaningless.
    pub fn overfit_flag(&self) -> bool {
        let n = self.epochs.len();
        let window = (n.div_ceil(10)).max(2);
        if n < window {
            return false;
        }
        let tail = &self.epochs[n - window..];
        let val: Vec<f64> = tail.iter().map(|e| e.val_rmse).collect();
        let train: Vec<f64> = tail.iter().map(|e| e.train_loss).collect();
        slope(&val) > 0.0 && slope(&train) < 0.0
    }

    /// `epoch,train_loss,val_rmse,val_mae` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_rmse,val_mae\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{},{}", e.epoch, e.train_loss, e.val_rmse, e.val_mae);
        }
        out
    }
}

fn evaluate<T: Trainable>(model: &T, values: &[Tensor], samples: &[T::Sample]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = values.iter().map(|v| tape.constant(v.clone())).collect();
    let out = model.forward(&mut tape, &vars, samples)?;
    Ok(tape.value(out).as_slice().to_vec())
}

/// Fit `model` on `fit`, tracking errors on `validation` after every epoch.
///
/// Each epoch shuffles the fit samples with a generator seeded from
/// `cfg.seed` and visits them in batches of `cfg.batch_size`, the last one
/// possibly smaller. A non-finite objective aborts with
/// [`Error::Diverged`]. The model holds the final parameters on return,
/// also on error (the parameters before the failing step).
pub fn train<T: Trainable>(
    model: &mut T,
    fit: &[T::Sample],
    validation: &[T::Sample],
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    if fit.is_empty() || validation.is_empty() {
        return Err(Error::structural(format!(
            "training needs nonempty fit and validation splits (got {} and {})",
            fit.len(),
            validation.len()
        )));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::invalid("training config", "batch size >= 1 and learning rate > 0"));
    }
    let blocks = model.param_blocks(cfg)?;
    let mut values: Vec<Tensor> = blocks.iter().map(|b| b.value.clone()).collect();
    let mut state = OptimizerState::new(&values);
    let adam = AdamParams::from_config(cfg);
    let y_val: Vec<f64> = validation.iter().map(|s| model.target(s)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..fit.len()).collect();
    let mut history = TrainHistory::default();
    let mut batch: Vec<T::Sample> = Vec::with_capacity(cfg.batch_size);
    let mut y: Vec<f64> = Vec::with_capacity(cfg.batch_size);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut weighted_loss = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            batch.clear();
            y.clear();
            for &i in chunk {
                batch.push(fit[i].clone());
                y.push(model.target(&fit[i]));
            }
            let mut tape = Tape::new();
            let vars: Vec<Var> = values.iter().map(|v| tape.param(v.clone())).collect();
            let step = (|| {
                let estimate = model.forward(&mut tape, &vars, &batch)?;
                let j = loss(&mut tape, estimate, &y, &vars, &blocks)?;
                let value = tape.value(j).item();
                if !value.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch: b,
                        loss: value,
                    });
                }
                Ok((value, tape.backward(j)?.into_tensors()))
            })();
            let (j, grads) = match step {
                Ok(ok) => ok,
                Err(e) => {
                    model.set_param_values(&values)?;
                    return Err(e);
                }
            };
            if grads.iter().any(|g| g.as_slice().iter().any(|v| !v.is_finite())) {
                model.set_param_values(&values)?;
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss: f64::NAN,
                });
            }
            weighted_loss += j * chunk.len() as f64;
            match cfg.optimizer {
                Optimizer::Sgd => {
                    state.step += 1;
                    sgd_step(&mut values, &grads, cfg.learning_rate)?
                }
                Optimizer::Adam => adam_step(&mut state, &mut values, &grads, adam)?,
            }
        }
        let estimates = evaluate(model, &values, validation)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: weighted_loss / fit.len() as f64,
            val_rmse: metrics::rmse(&y_val, &estimates)?,
            val_mae: metrics::mae(&y_val, &estimates)?,
        });
        if cfg.snapshot_every > 0 && epoch % cfg.snapshot_every == 0 {
            history.snapshots.push((epoch, values.clone()));
        }
    }
    model.set_param_values(&values)?;
    Ok(history)
}

/// Train on a well's fit split, validating on its validation split.
pub fn train_well(model: &mut ModelAssembly, data: &WellDataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate(model.kind)?;
    train(model, data.fit(), data.validation(), cfg)
}
