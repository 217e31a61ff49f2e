//! SGD with momentum and weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Param, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant,
    /// `lr · (1 + gamma · t / total)^(-power)`
    InverseDecay { gamma: f64, power: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
    pub total_steps: usize,
    pub step_count: usize,
    pub velocity: Vec<Tensor>,
}

impl OptimState {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::config("optim.learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config("optim.momentum", "must lie in [0, 1)"));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::config("optim.weight_decay", "must be non-negative"));
        }
        Ok(OptimState {
            learning_rate,
            momentum,
            weight_decay,
            schedule: LrSchedule::Constant,
            total_steps: 1,
            step_count: 0,
            velocity: Vec::new(),
        })
    }

    pub fn with_schedule(mut self, schedule: LrSchedule, total_steps: usize) -> Self {
        self.schedule = schedule;
        self.total_steps = total_steps.max(1);
        self
    }

    pub fn current_lr(&self) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::InverseDecay { gamma, power } => {
                let t = self.step_count as f64 / self.total_steps as f64;
                self.learning_rate * (1.0 + gamma * t).powf(-power)
            }
        }
    }

    /// `v ← μ·v + (g + wd·θ)`, `θ ← θ − lr·v`, then zero the gradients.
    pub fn sgd_step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} parameters, step got {}",
                self.velocity.len(),
                params.len()
            )));
        }
        let lr = self.current_lr();
        for (p, v) in params.iter_mut().zip(self.velocity.iter_mut()) {
            if v.shape() != p.value.shape() {
                return Err(Error::shape("sgd_step", "velocity does not match parameter"));
            }
            let vals = p.value.data_mut();
            for ((x, g), vi) in vals.iter_mut().zip(p.grad.data()).zip(v.data_mut()) {
                *vi = self.momentum * *vi + g + self.weight_decay * *x;
                *x -= lr * *vi;
            }
            p.zero_grad();
        }
        self.step_count += 1;
        Ok(())
    }
}
