use alloc::vec::Vec;

use super::params::{ParamId, ParamStore};
use crate::math;

pub trait Optimizer {
    /// Updates the listed parameters from their accumulated gradients.
    fn step(&mut self, store: &mut ParamStore, ids: &[ParamId]);
}

/// SGD with optional heavy-ball momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Option<Vec<f64>>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, store: &mut ParamStore, ids: &[ParamId]) {
        if self.velocity.len() < store.len() {
            self.velocity.resize(store.len(), None);
        }
        for &id in ids {
            let grad = store.grad(id).data().to_vec();
            let vel = self.velocity[id.index()].get_or_insert_with(|| alloc::vec![0.0; grad.len()]);
            let value = store.value_mut(id).data_mut();
            for ((p, g), v) in value.iter_mut().zip(&grad).zip(vel.iter_mut()) {
                *v = self.momentum * *v + g;
                *p -= self.lr * *v;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. One step counter is shared by all parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

impl Optimizer for Adam {
    fn step(&mut self, store: &mut ParamStore, ids: &[ParamId]) {
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - math::powi(beta1, self.step as i32);
        let c2 = 1.0 - math::powi(beta2, self.step as i32);
        for &id in ids {
            let grad = store.grad(id).data().to_vec();
            let (m, v) = self.moments[id.index()]
                .get_or_insert_with(|| (alloc::vec![0.0; grad.len()], alloc::vec![0.0; grad.len()]));
            let value = store.value_mut(id).data_mut();
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                value[i] -= lr * mhat / (math::sqrt(vhat) + eps);
            }
        }
    }
}
