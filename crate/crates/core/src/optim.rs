//! Adam with bias correction.

use alloc::vec::Vec;

#[allow(unused_imports)] // float methods when built without std
use num_traits::Float;

use crate::error::{numeric, structural, Result};
use crate::graph::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. Nothing is modified when any gradient
    /// is non-finite or mis-shaped.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() || grads.len() != self.first.len() {
            return Err(structural!(
                "adam: {} gradients for {} parameters",
                grads.len(),
                params.len()
            ));
        }
        for (i, (g, p)) in grads.iter().zip(params.tensors()).enumerate() {
            if !g.same_shape(p) {
                return Err(structural!(
                    "adam: gradient {i} has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                ));
            }
            if !g.is_finite() {
                return Err(numeric!("adam: non-finite gradient for parameter {i}"));
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let (pv, gv) = (p.values_mut(), g.values());
            let (mv, vv) = (m.values_mut(), v.values_mut());
            for i in 0..gv.len() {
                mv[i] = beta1 * mv[i] + (1.0 - beta1) * gv[i];
                vv[i] = beta2 * vv[i] + (1.0 - beta2) * gv[i] * gv[i];
                let m_hat = mv[i] / c1;
                let v_hat = vv[i] / c2;
                pv[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
