//! Adam with bias correction.
//!
//! The optimizer *adds* its update to the parameters: callers pass the
//! direction they want to move in, i.e. the negated gradient of whatever they
//! minimize (or the plain gradient of whatever they maximize).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, param_count: usize) -> Self {
        Self { config, m: vec![0.0; param_count], v: vec![0.0; param_count], t: 0 }
    }

    pub fn for_net(config: AdamConfig, net: &Mlp) -> Self {
        Self::new(config, net.param_count())
    }

    pub fn step(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Applies one Adam step along `direction` to every parameter of `net`.
    pub fn apply(&mut self, net: &mut Mlp, direction: &Gradients) -> Result<()> {
        let flat = direction.to_flat();
        if flat.len() != self.m.len() || net.param_count() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state holds {} moments, net has {} parameters, direction has {}",
                self.m.len(),
                net.param_count(),
                flat.len()
            )));
        }
        if flat.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite gradient passed to adam".into()));
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let mut idx = 0;
        for params in net.param_slices_mut() {
            for p in params.iter_mut() {
                let g = flat[idx];
                let m = beta1 * self.m[idx] + (1.0 - beta1) * g;
                let v = beta2 * self.v[idx] + (1.0 - beta2) * g * g;
                self.m[idx] = m;
                self.v[idx] = v;
                let m_hat = m / c1;
                let v_hat = v / c2;
                *p += lr * m_hat / (v_hat.sqrt() + eps);
                idx += 1;
            }
        }
        Ok(())
    }
}
