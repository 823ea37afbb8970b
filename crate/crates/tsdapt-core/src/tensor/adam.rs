//! Bias-corrected adaptive-moment optimizer.

use super::{Array, TensorError};
use serde::{Deserialize, Serialize};

/// Optimizer hyperparameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
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

/// Per-parameter first/second moment accumulators and the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    config: AdamConfig,
    first_moment: Vec<Array>,
    second_moment: Vec<Array>,
    step: u64,
}

impl AdamState {
    /// Fresh state with zeroed accumulators matching `params`.
    pub fn new(params: &[Array], config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: params.iter().map(|p| Array::zeros(p.shape())).collect(),
            second_moment: params.iter().map(|p| Array::zeros(p.shape())).collect(),
            step: 0,
        }
    }

    /// Rebuilds state from checkpointed accumulators.
    pub fn from_parts(
        config: AdamConfig,
        first_moment: Vec<Array>,
        second_moment: Vec<Array>,
        step: u64,
    ) -> Self {
        Self {
            config,
            first_moment,
            second_moment,
            step,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Array], &[Array]) {
        (&self.first_moment, &self.second_moment)
    }

    /// Applies one update in place. A `None` gradient is treated as zero
    /// (the parameter was not part of this step's graph).
    pub fn step(
        &mut self,
        params: &mut [Array],
        grads: &[Option<&Array>],
    ) -> Result<(), TensorError> {
        assert_eq!(params.len(), self.first_moment.len());
        assert_eq!(params.len(), grads.len());
        self.step += 1;
        let t = self.step;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(t as i32);
        let bias2 = 1.0 - c.beta2.powi(t as i32);

        for (index, param) in params.iter_mut().enumerate() {
            if let Some(g) = grads[index] {
                if g.shape() != param.shape() {
                    return Err(TensorError::OptimizerShapeMismatch {
                        step: t,
                        index,
                        param: param.shape().to_vec(),
                        grad: g.shape().to_vec(),
                    });
                }
            }
            let m = self.first_moment[index].data_mut();
            let v = self.second_moment[index].data_mut();
            let p = param.data_mut();
            match grads[index] {
                Some(g) => {
                    for i in 0..p.len() {
                        let gi = g.data()[i];
                        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                        let m_hat = m[i] / bias1;
                        let v_hat = v[i] / bias2;
                        p[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
                    }
                }
                None => {
                    for i in 0..p.len() {
                        m[i] *= c.beta1;
                        v[i] *= c.beta2;
                        let m_hat = m[i] / bias1;
                        let v_hat = v[i] / bias2;
                        p[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
                    }
                }
            }
        }
        for p in params.iter() {
            p.check_finite("adam_step")?;
        }
        Ok(())
    }
}
