//! Fully connected feed-forward ReLU networks.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    /// Keeps the output strictly positive.
    Softplus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
    output: OutputActivation,
}

/// Parameter leaves of an [`Mlp`] recorded on a tape, `[W_0, b_0, W_1, ...]`.
#[derive(Debug, Clone)]
pub struct MlpVars {
    pub layers: Vec<(Var, Var)>,
}

impl Mlp {
    /// He-style initialization: weights drawn from `N(0, 2 / fan_in)`,
    /// biases zero.
    pub fn init(widths: &[usize], output: OutputActivation, seed: u64) -> Result<Self> {
        check_widths(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(widths.len() - 1);
        let mut biases = Vec::with_capacity(widths.len() - 1);
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = libm::sqrt(2.0 / fan_in as f64);
            let normal = Normal::new(0.0, std).expect("finite std");
            let data = (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect();
            weights.push(Tensor::from_vec(fan_out, fan_in, data)?);
            biases.push(Tensor::zeros(fan_out, 1));
        }
        Ok(Mlp {
            widths: widths.to_vec(),
            weights,
            biases,
            output,
        })
    }

    pub fn from_parts(weights: Vec<Tensor>, biases: Vec<Tensor>, output: OutputActivation) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::structural("an MLP needs one bias per weight matrix"));
        }
        let mut widths = Vec::with_capacity(weights.len() + 1);
        widths.push(weights[0].cols());
        for (w, b) in weights.iter().zip(&biases) {
            if w.cols() != *widths.last().unwrap() || b.shape() != (w.rows(), 1) {
                return Err(Error::structural(format!(
                    "layer {} does not conform: W {}x{}, b {}x{}",
                    widths.len() - 1,
                    w.rows(),
                    w.cols(),
                    b.rows(),
                    b.cols()
                )));
            }
            widths.push(w.rows());
        }
        Ok(Mlp {
            widths,
            weights,
            biases,
            output,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Tensor] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Tensor] {
        &mut self.biases
    }

    /// `Σ (fan_in + 1) fan_out`.
    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    /// Parameter tensors interleaved as `[W_0, b_0, W_1, b_1, ...]`.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }

    /// Replace parameters from the interleaved layout of [`Mlp::tensors`].
    pub fn set_tensors(&mut self, tensors: &[Tensor]) -> Result<()> {
        if tensors.len() != 2 * self.weights.len() {
            return Err(Error::structural("wrong number of MLP parameter tensors"));
        }
        for (l, pair) in tensors.chunks(2).enumerate() {
            if pair[0].shape() != self.weights[l].shape() || pair[1].shape() != self.biases[l].shape() {
                return Err(Error::structural(format!("layer {l} parameter shape changed")));
            }
            self.weights[l] = pair[0].clone();
            self.biases[l] = pair[1].clone();
        }
        Ok(())
    }

    /// Record the parameters as learnable leaves.
    pub fn bind(&self, tape: &mut Tape) -> MlpVars {
        let layers = self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| (tape.param(w.clone()), tape.param(b.clone())))
            .collect();
        MlpVars { layers }
    }

    /// Record the parameters as constants (inference only).
    pub fn bind_frozen(&self, tape: &mut Tape) -> MlpVars {
        let layers = self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| (tape.constant(w.clone()), tape.constant(b.clone())))
            .collect();
        MlpVars { layers }
    }

    /// Forward pass on `x` (`input_dim x n`, one column per sample, already
    /// scaled). Returns an `output_dim x n` node.
    pub fn forward(&self, tape: &mut Tape, vars: &MlpVars, x: Var) -> Result<Var> {
        let rows = tape.value(x).rows();
        if rows != self.input_dim() {
            return Err(Error::structural(format!(
                "MLP expects {} input features, got {rows}",
                self.input_dim()
            )));
        }
        let last = vars.layers.len() - 1;
        let mut h = x;
        for (l, &(w, b)) in vars.layers.iter().enumerate() {
            h = tape.affine(w, h, b)?;
            if l < last {
                h = tape.relu(h)?;
            }
        }
        match self.output {
            OutputActivation::Identity => Ok(h),
            OutputActivation::Softplus => tape.softplus(h),
        }
    }

    /// Evaluate without keeping a tape.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind_frozen(&mut tape);
        let input = tape.constant(x.clone());
        let out = self.forward(&mut tape, &vars, input)?;
        Ok(tape.value(out).clone())
    }
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::invalid(
            "layer widths",
            format!("{widths:?}: need an input and an output width, all at least 1"),
        ));
    }
    Ok(())
}

/// Per-feature standardization fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaler {
    /// Mean and population standard deviation per feature. Features with no
    /// spread keep scale 1.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::structural("cannot fit a scaler on zero rows"));
        };
        let dim = first.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::structural("ragged feature rows"));
        }
        let n = rows.len() as f64;
        let mut mean = alloc::vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = alloc::vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = libm::sqrt(s / n);
                if sd > 1e-12 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(InputScaler { mean, scale })
    }

    pub fn identity(dim: usize) -> Self {
        InputScaler {
            mean: alloc::vec![0.0; dim],
            scale: alloc::vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Scale `rows` (one per sample) into an `dim x n` column-per-sample
    /// matrix.
    pub fn transform_columns(&self, rows: &[Vec<f64>]) -> Result<Tensor> {
        let dim = self.dim();
        let n = rows.len();
        if n == 0 {
            return Err(Error::structural("no rows to scale"));
        }
        let mut data = alloc::vec![0.0; dim * n];
        for (j, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::structural(format!("expected {dim} features, got {}", r.len())));
            }
            for i in 0..dim {
                data[i * n + j] = (r[i] - self.mean[i]) / self.scale[i];
            }
        }
        Tensor::from_vec(dim, n, data)
    }
}
