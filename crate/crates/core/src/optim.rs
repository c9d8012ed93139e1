//! First-order optimizers over a network's parameter list.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Param;

fn check_grads(params: &[Param], grads: &[Vec<f64>]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::InvalidArgument(format!("{} parameters but {} gradients", params.len(), grads.len())));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.value.len() != g.len() {
            return Err(Error::shape("optimizer", format!("{}: {} values, {} gradients", p.name, p.value.len(), g.len())));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "optimizer" });
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub const BETA1: f64 = 0.5;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(params: &[Param]) -> Self {
        Self::with_betas(params, Self::BETA1, Self::BETA2, Self::EPS)
    }

    pub fn with_betas(params: &[Param], beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self { beta1, beta2, eps, step: 0, m: zeros.clone(), v: zeros }
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: &mut [Param], grads: &[Vec<f64>], lr: f64) -> Result<()> {
        check_grads(params, grads)?;
        if self.m.len() != params.len() {
            return Err(Error::InvalidArgument("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (k, w) in p.value.data_mut().iter_mut().enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                *w -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// SGD with classical momentum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdState {
    pub momentum: f64,
    pub step: u64,
    pub velocity: Vec<Vec<f64>>,
}

impl SgdState {
    pub const MOMENTUM: f64 = 0.9;

    pub fn new(params: &[Param]) -> Self {
        Self::with_momentum(params, Self::MOMENTUM)
    }

    pub fn with_momentum(params: &[Param], momentum: f64) -> Self {
        Self { momentum, step: 0, velocity: params.iter().map(|p| vec![0.0; p.value.len()]).collect() }
    }

    pub fn step(&mut self, params: &mut [Param], grads: &[Vec<f64>], lr: f64) -> Result<()> {
        check_grads(params, grads)?;
        if self.velocity.len() != params.len() {
            return Err(Error::InvalidArgument("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        for ((p, g), vel) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for (k, w) in p.value.data_mut().iter_mut().enumerate() {
                vel[k] = self.momentum * vel[k] + g[k];
                *w -= lr * vel[k];
            }
        }
        Ok(())
    }
}
