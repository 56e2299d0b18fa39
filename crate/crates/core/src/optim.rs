//! AdamW with a multi-step learning-rate schedule.

use alloc::vec::Vec;

use crate::param::ParamStore;
use crate::tensor::Tensor;

/// Learning rate multiplied by `gamma` at each milestone step.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiStepSchedule {
    pub base_lr: f32,
    pub milestones: Vec<u64>,
    pub gamma: f32,
}

impl MultiStepSchedule {
    /// Learning rate in effect for the (0-based) `step`.
    pub fn lr_at(&self, step: u64) -> f32 {
        let passed = self.milestones.iter().filter(|&&m| step >= m).count();
        let mut lr = self.base_lr;
        for _ in 0..passed {
            lr *= self.gamma;
        }
        lr
    }

    /// Milestones at the given fractions of `total_steps`.
    pub fn from_fractions(base_lr: f32, fractions: &[f64], gamma: f32, total_steps: u64) -> Self {
        Self {
            base_lr,
            milestones: fractions
                .iter()
                .map(|f| libm::round(f * total_steps as f64) as u64)
                .collect(),
            gamma,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment buffers mirror the parameter list; frozen parameters get none.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub schedule: MultiStepSchedule,
    pub step: u64,
    pub first: Vec<Option<Tensor>>,
    pub second: Vec<Option<Tensor>>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, config: AdamWConfig, schedule: MultiStepSchedule) -> Self {
        let moments = || {
            store
                .iter()
                .map(|(_, p)| p.requires_grad().then(|| Tensor::zeros(p.value.shape())))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            schedule,
            step: 0,
            first: moments(),
            second: moments(),
        }
    }

    pub fn lr(&self) -> f32 {
        self.schedule.lr_at(self.step)
    }

    /// One decoupled-weight-decay Adam update from the accumulated gradients.
    /// Gradients are left in place; callers zero them.
    pub fn step(&mut self, store: &mut ParamStore) {
        let lr = self.lr();
        self.step += 1;
        let t = self.step as i32;
        let c = &self.config;
        let bc1 = 1.0 - num_traits::Float::powi(c.beta1, t);
        let bc2 = 1.0 - num_traits::Float::powi(c.beta2, t);
        for (id, p) in store.iter_mut() {
            let Some(grad) = p.grad.as_ref() else { continue };
            let (Some(m), Some(v)) = (
                self.first[id.index()].as_mut(),
                self.second[id.index()].as_mut(),
            ) else {
                continue;
            };
            let decay = 1.0 - lr * c.weight_decay;
            for (((w, &g), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *w *= decay;
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * mhat / (num_traits::Float::sqrt(vhat) + c.eps);
            }
        }
    }
}
