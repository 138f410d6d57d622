use serde::{Deserialize, Serialize};

use crate::{ParamStore, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for every parameter of one [`ParamStore`], in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl AdamState {
    /// Zeroed moments shaped after `store`.
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect()
        };
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    /// State with no moment tensors; [`AdamState::step`] rejects it until
    /// moments matching the parameters are installed.
    pub fn uninitialized(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn check_layout(&self, store: &ParamStore) -> Result<()> {
        if self.first.len() != store.len() || self.second.len() != store.len() {
            return Err(TensorError::AdamState(format!(
                "{} parameters but {}/{} moment tensors",
                store.len(),
                self.first.len(),
                self.second.len()
            )));
        }
        for ((p, m), v) in store.iter().zip(&self.first).zip(&self.second) {
            if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
                return Err(TensorError::AdamState(format!(
                    "moment shape for `{}` is {:?}, parameter is {:?}",
                    p.name,
                    m.shape(),
                    p.value.shape()
                )));
            }
        }
        Ok(())
    }

    /// One bias-corrected Adam update using the gradients currently held by
    /// `store`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        self.check_layout(store)?;
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, m), v) in store.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let grads = p.grad.data();
            let values = p.value.data_mut();
            for (((x, g), m), v) in values
                .iter_mut()
                .zip(grads)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
