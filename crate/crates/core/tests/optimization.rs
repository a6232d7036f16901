use approx::assert_relative_eq;
use vfm_core::autodiff::{Tape, Var};
use vfm_core::estimation::{
    adam_step, compute_lambda, sgd_step, train, AdamParams, OptimizerState, Optimizer, ParamBlock, TrainConfig,
    Trainable,
};
use vfm_core::{Result, Tensor};

/// `y = θ0 x + θ1` with independent Gaussian priors on both.
#[derive(Clone)]
struct Line {
    theta: [f64; 2],
    prior: [(f64, f64); 2],
}

impl Trainable for Line {
    type Sample = (f64, f64);

    fn param_blocks(&self, cfg: &TrainConfig) -> Result<Vec<ParamBlock>> {
        let sigma_eps = cfg.sigma_eps.unwrap();
        (0..2)
            .map(|i| {
                Ok(ParamBlock {
                    name: format!("theta{i}"),
                    value: Tensor::scalar(self.theta[i]),
                    lambda: compute_lambda(sigma_eps, self.prior[i].1)?,
                    mean: self.prior[i].0,
                })
            })
            .collect()
    }

    fn set_param_values(&mut self, values: &[Tensor]) -> Result<()> {
        self.theta = [values[0].item(), values[1].item()];
        Ok(())
    }

    fn forward(&self, tape: &mut Tape, params: &[Var], batch: &[(f64, f64)]) -> Result<Var> {
        let x = tape.constant(Tensor::row(batch.iter().map(|s| s.0).collect()));
        let slope = tape.mul(params[0], x)?;
        tape.add(slope, params[1])
    }

    fn target(&self, s: &(f64, f64)) -> f64 {
        s.1
    }
}

fn line_data() -> Vec<(f64, f64)> {
    (0..40)
        .map(|i| {
            let x = i as f64 / 10.0;
            (x, 3.0 * x - 1.0 + 0.3 * ((i * 7 % 11) as f64 - 5.0) / 5.0)
        })
        .collect()
}

fn cfg(optimizer: Optimizer, epochs: usize, batch: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: batch,
        learning_rate: 0.01,
        sigma_eps: Some(1.0),
        optimizer,
        ..TrainConfig::table2_m()
    }
}

#[test]
fn adam_matches_textbook_trace() {
    let p = AdamParams {
        lr: 0.05,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut theta = vec![Tensor::row(vec![1.0, -2.0])];
    let mut state = OptimizerState::new(&theta);
    // oracle: scalar loops written out independently
    let mut x = [1.0f64, -2.0];
    let (mut m, mut v) = ([0.0f64; 2], [0.0f64; 2]);
    for t in 1..=50 {
        // gradient of x0^2 + 3 x1^2 + x0 x1
        let g = [2.0 * x[0] + x[1], 6.0 * x[1] + x[0]];
        adam_step(&mut state, &mut theta, &[Tensor::row(g.to_vec())], p).unwrap();
        for i in 0..2 {
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
            let mh = m[i] / (1.0 - 0.9f64.powi(t));
            let vh = v[i] / (1.0 - 0.999f64.powi(t));
            x[i] -= 0.05 * mh / (vh.sqrt() + 1e-8);
        }
        for i in 0..2 {
            assert_relative_eq!(theta[0].as_slice()[i], x[i], max_relative = 1e-12, epsilon = 1e-12);
        }
    }
    assert_eq!(state.step, 50);
}

#[test]
fn sgd_step_is_plain_gradient_descent() {
    let mut theta = vec![Tensor::scalar(2.0), Tensor::row(vec![1.0, 1.0])];
    sgd_step(&mut theta, &[Tensor::scalar(4.0), Tensor::row(vec![-1.0, 0.5])], 0.1).unwrap();
    assert_relative_eq!(theta[0].item(), 1.6);
    assert_eq!(theta[1].as_slice(), &[1.1, 0.95]);
    assert!(sgd_step(&mut theta, &[Tensor::scalar(1.0)], 0.1).is_err());
}

#[test]
fn full_batch_sgd_loss_does_not_increase() {
    let data = line_data();
    let mut model = Line {
        theta: [0.0, 0.0],
        prior: [(0.0, 10.0), (0.0, 10.0)],
    };
    let c = TrainConfig {
        learning_rate: 0.02,
        ..cfg(Optimizer::Sgd, 300, data.len())
    };
    let history = train(&mut model, &data, &data, &c).unwrap();
    // with one batch per epoch the epoch loss is the objective before each step
    for w in history.epochs.windows(2) {
        assert!(w[1].train_loss <= w[0].train_loss + 1e-12, "{:?}", w);
    }
    assert!(history.epochs.last().unwrap().train_loss < 0.1 * history.epochs[0].train_loss);
}

#[test]
fn huge_lambda_pins_parameters_to_prior_mean() {
    let data = line_data();
    let mut model = Line {
        theta: [0.4, 0.6],
        // sigma_eps 1, sigma 10^-4.5 => lambda 1e9
        prior: [(0.5, 10f64.powf(-4.5)), (0.5, 10f64.powf(-4.5))],
    };
    let blocks = model.param_blocks(&cfg(Optimizer::Adam, 1, 1)).unwrap();
    assert_relative_eq!(blocks[0].lambda, 1e9, max_relative = 1e-9);
    train(&mut model, &data, &data, &cfg(Optimizer::Adam, 300, 10)).unwrap();
    for t in model.theta {
        assert!((t - 0.5).abs() < 1e-3, "{t}");
    }
}

#[test]
fn map_estimate_matches_normal_equations() {
    let data = line_data();
    let prior = [(2.0, 0.5), (0.0, 0.2)];
    let mut model = Line { theta: [0.0, 0.0], prior };
    train(&mut model, &data, &data, &cfg(Optimizer::Adam, 6000, data.len())).unwrap();
    // minimize Σ(y - a x - b)^2 + λa (a - μa)^2 + λb (b - μb)^2
    let (la, lb) = (1.0 / (0.5f64 * 0.5), 1.0 / (0.2f64 * 0.2));
    let (sx, sxx, sy, sxy) = data.iter().fold((0.0, 0.0, 0.0, 0.0), |acc, (x, y)| {
        (acc.0 + x, acc.1 + x * x, acc.2 + y, acc.3 + x * y)
    });
    let n = data.len() as f64;
    let (a11, a12, a22) = (sxx + la, sx, n + lb);
    let (r1, r2) = (sxy + la * prior[0].0, sy + lb * prior[1].0);
    let det = a11 * a22 - a12 * a12;
    let a = (r1 * a22 - a12 * r2) / det;
    let b = (a11 * r2 - a12 * r1) / det;
    assert_relative_eq!(model.theta[0], a, epsilon = 1e-6);
    assert_relative_eq!(model.theta[1], b, epsilon = 1e-6);
}

#[test]
fn training_is_deterministic_and_seed_dependent() {
    let data = line_data();
    let start = Line {
        theta: [0.0, 0.0],
        prior: [(0.0, 10.0), (0.0, 10.0)],
    };
    let run = |seed| {
        let mut m = start.clone();
        let h = train(&mut m, &data, &data[..5], &TrainConfig { seed, ..cfg(Optimizer::Adam, 20, 7) }).unwrap();
        (m.theta, h.to_csv())
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1).1, run(2).1);
}

#[test]
fn empty_splits_and_bad_settings_are_rejected() {
    let data = line_data();
    let mut m = Line {
        theta: [0.0, 0.0],
        prior: [(0.0, 1.0), (0.0, 1.0)],
    };
    assert!(train(&mut m, &[], &data, &cfg(Optimizer::Adam, 1, 4)).is_err());
    assert!(train(&mut m, &data, &[], &cfg(Optimizer::Adam, 1, 4)).is_err());
    assert!(train(&mut m, &data, &data, &cfg(Optimizer::Adam, 1, 0)).is_err());
    let zero_epochs = train(&mut m, &data, &data, &cfg(Optimizer::Adam, 0, 4)).unwrap();
    assert!(zero_epochs.is_empty());
    assert_eq!(m.theta, [0.0, 0.0]);
}
