//! Adam with the inverse-square-root warmup ("Noam") learning-rate schedule.

use std::collections::BTreeMap;

use crate::error::{NnError, Result};
use crate::params::ParameterStore;
use crate::tensor::Tensor;

/// `lr = factor * d^-0.5 * min(step^-0.5, step * warmup^-1.5)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoamSchedule {
    pub model_dim: usize,
    pub warmup: u64,
    pub factor: f64,
}

impl NoamSchedule {
    pub fn new(model_dim: usize, warmup: u64) -> Self {
        Self {
            model_dim,
            warmup,
            factor: 1.0,
        }
    }

    /// Learning rate for a 1-based `step`. Step 0 is treated as step 1 so the
    /// rate is always positive.
    pub fn rate(&self, step: u64) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup.max(1) as f64;
        self.factor * (self.model_dim as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub schedule: NoamSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first_moment: BTreeMap<String, Tensor>,
    pub second_moment: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    /// Moment decay rates follow the usual transformer recipe (0.9, 0.98, 1e-9).
    pub fn new(schedule: NoamSchedule) -> Self {
        Self {
            schedule,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            step: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.schedule.rate(self.step)
    }

    /// One Adam update of every parameter, then clears gradients.
    ///
    /// If any gradient is non-finite, nothing is updated and the offending
    /// parameter is named in the error.
    pub fn step(&mut self, store: &mut ParameterStore) -> Result<()> {
        if let Some((name, _)) = store.iter().find(|(_, p)| !p.grad.is_finite()) {
            return Err(NnError::NonFiniteGradient(name.to_string()));
        }
        self.step += 1;
        let lr = self.schedule.rate(self.step);
        let bc1 = 1.0 - self.beta1.powf(self.step as f64);
        let bc2 = 1.0 - self.beta2.powf(self.step as f64);
        for (name, p) in store.iter_mut() {
            let m = self
                .first_moment
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(p.value.shape()));
            let v = self
                .second_moment
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(p.value.shape()));
            let (g, w) = (p.grad.data(), p.value.data_mut());
            for i in 0..g.len() {
                let mi = &mut m.data_mut()[i];
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g[i];
                let vi = &mut v.data_mut()[i];
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m.data()[i] / bc1;
                let vhat = v.data()[i] / bc2;
                w[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        store.zero_grad();
        Ok(())
    }
}
