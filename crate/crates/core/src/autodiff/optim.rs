use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ParameterStore;

/// Plain gradient descent: `w <- w - lr * g`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f32,
}

impl Sgd {
    pub fn new(lr: f32) -> Self {
        Sgd { lr }
    }

    /// Applies one update and zeroes the gradients.
    pub fn step(&mut self, params: &mut ParameterStore) -> Result<()> {
        check_grads(params)?;
        for (_, t) in params.iter_mut() {
            let g = t.grad().expect("checked").to_vec();
            for (w, gv) in t.data_mut().iter_mut().zip(g) {
                *w -= self.lr * gv;
            }
            t.zero_grad();
        }
        Ok(())
    }
}

/// Adam with bias-corrected moments. Moment buffers line up with the store's
/// parameter order and are created on the first step.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: u32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f32, beta1: f32, beta2: f32, eps: f32) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.t
    }

    /// Number of per-parameter moment slots held.
    pub fn state_len(&self) -> usize {
        self.m.len()
    }

    pub fn step(&mut self, params: &mut ParameterStore) -> Result<()> {
        check_grads(params)?;
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() {
            return Err(Error::usage(format!(
                "adam state tracks {} parameters, store has {}",
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (_, t)) in params.iter_mut().enumerate() {
            let g = t.grad().expect("checked").to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in t.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            t.zero_grad();
        }
        Ok(())
    }
}

fn check_grads(params: &ParameterStore) -> Result<()> {
    for (name, t) in params.iter() {
        if t.requires_grad() && t.grad().is_none() {
            return Err(Error::usage(format!("parameter {name} has no gradient")));
        }
    }
    Ok(())
}

/// Optimizer selection as it appears in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Per-client optimizer with its state.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalOptimizer {
    Sgd(Sgd),
    Adam(Adam),
}

impl LocalOptimizer {
    pub fn new(kind: OptimizerKind, lr: f32) -> Self {
        match kind {
            OptimizerKind::Sgd => LocalOptimizer::Sgd(Sgd::new(lr)),
            OptimizerKind::Adam => LocalOptimizer::Adam(Adam::new(lr)),
        }
    }

    pub fn step(&mut self, params: &mut ParameterStore) -> Result<()> {
        match self {
            LocalOptimizer::Sgd(o) => o.step(params),
            LocalOptimizer::Adam(o) => o.step(params),
        }
    }

    pub fn set_lr(&mut self, lr: f32) {
        match self {
            LocalOptimizer::Sgd(o) => o.lr = lr,
            LocalOptimizer::Adam(o) => o.lr = lr,
        }
    }
}
