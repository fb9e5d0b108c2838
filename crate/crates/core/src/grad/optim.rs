//! AdamW with decoupled weight decay and a half-cosine schedule.

use serde::{Deserialize, Serialize};

use crate::numerics::Matrix;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct OptimConfig {
    pub lr0: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub total_steps: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr0: 1e-3,
            lr_min: 1e-6,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            total_steps: 1,
        }
    }
}

/// Half-cosine from `lr0` at step 0 down to `lr_min` at `total`.
pub fn cosine_lr(step: usize, total: usize, lr0: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr_min;
    }
    let frac = (step.min(total) as f64) / total as f64;
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[derive(Clone, Debug)]
pub struct OptimState {
    pub config: OptimConfig,
    pub step: usize,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl OptimState {
    pub fn new(config: OptimConfig) -> Self {
        OptimState {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        cosine_lr(self.step, self.config.total_steps, self.config.lr0, self.config.lr_min)
    }

    /// One AdamW update at the scheduled learning rate.
    pub fn step(&mut self, params: &mut [(&mut Matrix, bool)], grads: &[Matrix]) {
        let lr = self.lr();
        self.step_with_lr(params, grads, lr);
    }

    /// `params` pairs each tensor with its decay-exempt flag.
    pub fn step_with_lr(&mut self, params: &mut [(&mut Matrix, bool)], grads: &[Matrix], lr: f64) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        self.begin_step(grads);
        for (k, ((p, exempt), g)) in params.iter_mut().zip(grads).enumerate() {
            self.update(k, p, *exempt, g, lr);
        }
    }

    /// Advances the step counter; follow with one `update` per tensor.
    pub fn begin_step(&mut self, grads: &[Matrix]) {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Matrix::zeros(g.rows(), g.cols())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
    }

    /// AdamW update of tensor `k` for the current step.
    pub fn update(&mut self, k: usize, p: &mut Matrix, exempt: bool, g: &Matrix, lr: f64) {
        assert_eq!(p.shape(), g.shape(), "gradient shape");
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let decay = if exempt { 0.0 } else { lr * c.weight_decay };
        let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
        for (i, (x, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            *x -= decay * *x;
            *x -= lr * mhat / (vhat.sqrt() + c.eps);
        }
    }
}
