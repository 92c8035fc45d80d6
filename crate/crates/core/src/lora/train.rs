//! Reference trainer for a single adapted linear map.
//!
//! The frozen map `W` (d_out × d_in) is adapted as `W + s·B·A` and fitted to
//! targets `Y` by minimizing `(1/2n)·‖(W + s·B·A)·X − Y‖²` over `A` and `B` with
//! Adam. `B` starts at zero, so the first forward pass is the base map.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AdapterMetadata, LoraAdapter, LoraFactors, TrainConfig};
use crate::error::{Error, Result};

/// Regression data for one frozen tensor. Columns of `inputs`/`targets` are samples.
#[derive(Debug, Clone)]
pub struct ToyTask {
    pub tensor: String,
    pub base: DMatrix<f64>,
    pub inputs: DMatrix<f64>,
    pub targets: DMatrix<f64>,
}

impl ToyTask {
    fn validate(&self) -> Result<()> {
        let (d_out, d_in) = self.base.shape();
        if self.inputs.ncols() == 0 {
            return Err(Error::InvalidInput("training data is empty".into()));
        }
        if self.inputs.nrows() != d_in || self.targets.nrows() != d_out || self.targets.ncols() != self.inputs.ncols() {
            return Err(Error::InvalidInput("inputs/targets do not match the base map".into()));
        }
        Ok(())
    }
}

/// Loss and gradients with respect to `(A, B)` at the given factors.
pub fn loss_and_grad(task: &ToyTask, a: &DMatrix<f64>, b: &DMatrix<f64>, scale: f64) -> (f64, DMatrix<f64>, DMatrix<f64>) {
    let n = task.inputs.ncols() as f64;
    let w = &task.base + (b * a) * scale;
    let residual = &w * &task.inputs - &task.targets;
    let loss = residual.norm_squared() / (2.0 * n);
    let g = &residual * task.inputs.transpose() / n;
    let grad_a = b.transpose() * &g * scale;
    let grad_b = &g * a.transpose() * scale;
    (loss, grad_a, grad_b)
}

/// Plain Adam (no weight decay) over one matrix.
#[derive(Debug, Clone)]
pub struct Adam {
    m: DMatrix<f64>,
    v: DMatrix<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(rows: usize, cols: usize) -> Self {
        Self { m: DMatrix::zeros(rows, cols), v: DMatrix::zeros(rows, cols), t: 0 }
    }

    pub fn step(&mut self, param: &mut DMatrix<f64>, grad: &DMatrix<f64>, lr: f64) {
        self.t += 1;
        self.m = &self.m * Self::BETA1 + grad * (1.0 - Self::BETA1);
        self.v = &self.v * Self::BETA2 + grad.component_mul(grad) * (1.0 - Self::BETA2);
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for ((p, m), v) in param.iter_mut().zip(self.m.iter()).zip(self.v.iter()) {
            *p -= lr * (m / c1) / ((v / c2).sqrt() + Self::EPS);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub adapter: LoraAdapter,
    /// Loss before each step, followed by the final loss.
    pub losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("at least one loss")
    }
}

/// Fit a rank-`config.rank` adapter to `task`; the base map never changes.
pub fn toy_lora_train(id: &str, task: &ToyTask, config: &TrainConfig, metadata: AdapterMetadata, seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    task.validate()?;
    let (d_out, d_in) = task.base.shape();
    let r = config.rank;
    if r > d_in.min(d_out) {
        return Err(Error::InvalidConfig(format!("rank {r} exceeds min({d_out}, {d_in})")));
    }
    let scale = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (d_in as f64).sqrt();
    let mut a = DMatrix::from_fn(r, d_in, |_, _| rng.gen_range(-bound..bound));
    let mut b = DMatrix::zeros(d_out, r);
    let (mut opt_a, mut opt_b) = (Adam::new(r, d_in), Adam::new(d_out, r));

    let total = config.total_steps();
    let mut losses = Vec::with_capacity(total + 1);
    for step in 0..total {
        let (loss, ga, gb) = loss_and_grad(task, &a, &b, scale);
        losses.push(loss);
        let lr = config.learning_rate * config.schedule.factor(step, total);
        opt_a.step(&mut a, &ga, lr);
        opt_b.step(&mut b, &gb, lr);
    }
    losses.push(loss_and_grad(task, &a, &b, scale).0);
    tracing::debug!(id, initial = losses[0], last = losses[total], "toy adapter trained");

    let adapter = LoraAdapter::new(id, r, scale, BTreeMap::from([(task.tensor.clone(), LoraFactors { a, b })]), metadata)?;
    Ok(TrainOutcome { adapter, losses })
}
