use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::error::{Error, Result};

/// Adam hyperparameters with a staircase exponential learning-rate decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub decay_rate: f64,
    pub decay_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            decay_rate: 0.9,
            decay_steps: 2000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    /// `lr(t) = lr₀ · decay^⌊t / steps⌋`
    pub fn learning_rate_at(&self, step: u64) -> f64 {
        let exponent = (step / self.decay_steps.max(1)) as i32;
        self.learning_rate * self.decay_rate.powi(exponent)
    }
}

/// First/second moment buffers and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub(crate) first: Vec<Vec<f64>>,
    pub(crate) second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<P: Parameters + ?Sized>(params: &P, config: AdamConfig) -> Self {
        let shapes: Vec<usize> = params.param_slices().iter().map(|s| s.len()).collect();
        Self {
            config,
            step: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn from_parts(
        config: AdamConfig,
        step: u64,
        first: Vec<Vec<f64>>,
        second: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if first.len() != second.len() || first.iter().zip(&second).any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::Shape("adam moment buffers differ in shape".into()));
        }
        Ok(Self {
            config,
            step,
            first,
            second,
        })
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.first, &self.second)
    }

    /// Learning rate that the next call to [`step`](AdamState::step) will use.
    pub fn current_learning_rate(&self) -> f64 {
        self.config.learning_rate_at(self.step)
    }

    /// Applies one Adam update. Gradients are checked for NaN/Inf first; on
    /// failure nothing is modified.
    pub fn step<P, G>(&mut self, params: &mut P, grads: &G) -> Result<()>
    where
        P: Parameters + ?Sized,
        G: Parameters + ?Sized,
    {
        let grad_slices = grads.param_slices();
        let mut param_slices = params.param_slices_mut();
        if grad_slices.len() != self.first.len()
            || param_slices.len() != self.first.len()
            || grad_slices
                .iter()
                .zip(&param_slices)
                .zip(&self.first)
                .any(|((g, p), m)| g.len() != m.len() || p.len() != m.len())
        {
            return Err(Error::Shape(
                "parameters, gradients and optimizer state differ in shape".into(),
            ));
        }
        for (buffer, g) in grad_slices.iter().enumerate() {
            if let Some(index) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { buffer, index });
            }
        }

        let AdamConfig {
            beta1,
            beta2,
            epsilon,
            ..
        } = self.config;
        let lr = self.current_learning_rate();
        let t = (self.step + 1) as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for (((p, g), m), v) in param_slices
            .iter_mut()
            .zip(&grad_slices)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        self.step += 1;
        Ok(())
    }
}
