//! First-order optimizer with a momentum accumulator and step-size schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Constant,
    /// Linear decay from the base rate to `base * final_fraction` over
    /// `total_steps`, constant afterwards.
    Linear { total_steps: u64, final_fraction: f64 },
    /// Half-cosine decay with the same endpoints as `Linear`.
    Cosine { total_steps: u64, final_fraction: f64 },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Constant
    }
}

impl Schedule {
    pub fn factor(&self, step: u64) -> f64 {
        match *self {
            Schedule::Constant => 1.0,
            Schedule::Linear {
                total_steps,
                final_fraction,
            } => {
                let x = progress(step, total_steps);
                1.0 - (1.0 - final_fraction) * x
            }
            Schedule::Cosine {
                total_steps,
                final_fraction,
            } => {
                let x = progress(step, total_steps);
                final_fraction + (1.0 - final_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * x).cos())
            }
        }
    }
}

fn progress(step: u64, total: u64) -> f64 {
    if total == 0 {
        1.0
    } else {
        (step.min(total) as f64) / (total as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub schedule: Schedule,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            momentum: 0.9,
            schedule: Schedule::Constant,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        match self.schedule {
            Schedule::Constant => {}
            Schedule::Linear { final_fraction, .. } | Schedule::Cosine { final_fraction, .. } => {
                if !(0.0..=1.0).contains(&final_fraction) {
                    return Err(Error::Config(format!("final_fraction must be in [0, 1], got {final_fraction}")));
                }
            }
        }
        Ok(())
    }
}

/// Momentum accumulators shaped like the policy table plus the schedule
/// position.
///
/// Entries whose velocity has never been nonzero are tracked so that sparse
/// steps can skip them; skipping is exact because such entries are left
/// unchanged by a dense step too.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    config: OptimizerConfig,
    velocity: Vec<T>,
    step: u64,
    active: Vec<usize>,
    is_active: Vec<bool>,
    pub(crate) scratch: Vec<T>,
}

impl<T: PartialEq> PartialEq for OptimizerState<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.velocity == other.velocity && self.step == other.step
    }
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: OptimizerConfig, len: usize) -> Self {
        Self {
            config,
            velocity: vec![T::zero(); len],
            step: 0,
            active: Vec::new(),
            is_active: vec![false; len],
            scratch: Vec::new(),
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn velocity(&self) -> &[T] {
        &self.velocity
    }

    /// Number of steps taken; doubles as the schedule position.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.velocity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocity.is_empty()
    }

    pub fn current_rate(&self) -> f64 {
        self.config.learning_rate * self.config.schedule.factor(self.step)
    }

    /// Fresh accumulators and schedule position, same hyperparameters.
    pub fn reset(&mut self) {
        self.velocity.iter_mut().for_each(|v| *v = T::zero());
        self.is_active.iter_mut().for_each(|a| *a = false);
        self.active.clear();
        self.step = 0;
    }

    /// Indices that may have a nonzero velocity.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    fn activate(&mut self, i: usize) {
        if !self.is_active[i] {
            self.is_active[i] = true;
            self.active.push(i);
        }
    }

    /// Same update as [`apply`](Self::apply) for a gradient that is zero
    /// outside `touched`. Zeroes `grad` at `touched` afterwards.
    pub fn apply_sparse(&mut self, params: &mut [T], grad: &mut [T], touched: &[usize]) -> Result<()> {
        if params.len() != self.velocity.len() || grad.len() != self.velocity.len() {
            return Err(Error::Integrity(format!(
                "optimizer shape {} does not match params {} / grad {}",
                self.velocity.len(),
                params.len(),
                grad.len()
            )));
        }
        for &i in touched {
            self.activate(i);
        }
        let mu = T::of(self.config.momentum);
        let lr = T::of(self.current_rate());
        for &i in &self.active {
            let v = mu * self.velocity[i] + grad[i];
            self.velocity[i] = v;
            params[i] = params[i] - lr * v;
        }
        for &i in touched {
            grad[i] = T::zero();
        }
        self.step += 1;
        Ok(())
    }

    /// `v <- mu * v + g; theta <- theta - lr(step) * v; step += 1`.
    pub fn apply(&mut self, params: &mut [T], grad: &[T]) -> Result<()> {
        if params.len() != self.velocity.len() || grad.len() != self.velocity.len() {
            return Err(Error::Integrity(format!(
                "optimizer shape {} does not match params {} / grad {}",
                self.velocity.len(),
                params.len(),
                grad.len()
            )));
        }
        let mu = T::of(self.config.momentum);
        let lr = T::of(self.current_rate());
        for ((p, v), &g) in params.iter_mut().zip(self.velocity.iter_mut()).zip(grad) {
            *v = mu * *v + g;
            *p = *p - lr * *v;
        }
        for i in 0..grad.len() {
            if self.velocity[i] != T::zero() {
                self.activate(i);
            }
        }
        self.step += 1;
        Ok(())
    }
}
