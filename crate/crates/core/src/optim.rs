//! AdamW with cosine-annealed learning rate.

use crate::error::{Error, Result};

/// lr(t) = end + 0.5 (start - end) (1 + cos(pi t / total)).
#[derive(Debug, Clone, PartialEq)]
pub struct CosineSchedule {
    pub start_lr: f64,
    pub end_lr: f64,
    pub total_steps: usize,
}

impl CosineSchedule {
    pub fn new(start_lr: f64, end_lr: f64, total_steps: usize) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if !(end_lr > 0.0 && end_lr <= start_lr) {
            return Err(Error::Config(format!(
                "learning rates must satisfy 0 < end_lr <= start_lr (got {start_lr}, {end_lr})"
            )));
        }
        Ok(Self {
            start_lr,
            end_lr,
            total_steps,
        })
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step == 0 {
            return self.start_lr;
        }
        if step >= self.total_steps {
            return self.end_lr;
        }
        let progress = step as f64 / self.total_steps as f64;
        self.end_lr
            + 0.5 * (self.start_lr - self.end_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Decoupled-weight-decay Adam over one flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
    schedule: CosineSchedule,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamW {
    pub fn new(param_count: usize, schedule: CosineSchedule, weight_decay: f64) -> Self {
        Self {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
            schedule,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Learning rate the next [`step`](Self::step) call will use.
    pub fn current_lr(&self) -> f64 {
        self.schedule.lr_at(self.step)
    }

    pub fn schedule(&self) -> &CosineSchedule {
        &self.schedule
    }

    /// One update in place. Decay is decoupled: it shrinks the parameter
    /// directly and never enters the moment estimates.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if self.step >= self.schedule.total_steps {
            return Err(Error::State(format!(
                "optimizer schedule exhausted after {} steps",
                self.schedule.total_steps
            )));
        }
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "adamw step",
                self.m.len(),
                format!("params {}, grads {}", params.len(), grads.len()),
            ));
        }
        let lr = self.schedule.lr_at(self.step);
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for j in 0..params.len() {
            let g = grads[j];
            if !g.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite gradient at index {j}"
                )));
            }
            self.m[j] = self.beta1 * self.m[j] + (1.0 - self.beta1) * g;
            self.v[j] = self.beta2 * self.v[j] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[j] / bc1;
            let v_hat = self.v[j] / bc2;
            if self.weight_decay > 0.0 {
                params[j] -= lr * self.weight_decay * params[j];
            }
            params[j] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}
