use crate::error::{Error, Result};

/// Staircase exponential decay: `initial_lr · decay_factor^⌊epoch / decay_every⌋`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub initial_lr: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
}

impl Schedule {
    pub fn new(initial_lr: f64, decay_factor: f64, decay_every: usize) -> Result<Self> {
        if !(initial_lr > 0.0 && initial_lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("initial lr must be positive, got {initial_lr}")));
        }
        if !(decay_factor > 0.0 && decay_factor <= 1.0) {
            return Err(Error::InvalidArgument(format!("decay factor must be in (0, 1], got {decay_factor}")));
        }
        if decay_every == 0 {
            return Err(Error::InvalidArgument("decay interval must be positive".into()));
        }
        Ok(Self {
            initial_lr,
            decay_factor,
            decay_every,
        })
    }

    /// 0.001, ×0.9954 every 10 epochs.
    pub fn field() -> Self {
        Self {
            initial_lr: 1e-3,
            decay_factor: 0.9954,
            decay_every: 10,
        }
    }

    /// 0.001, ×0.9 every 100 epochs; shared by poses and focal length.
    pub fn camera() -> Self {
        Self {
            initial_lr: 1e-3,
            decay_factor: 0.9,
            decay_every: 100,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_at(self, epoch)
    }
}

pub fn lr_at(schedule: &Schedule, epoch: usize) -> f64 {
    let stairs = epoch / schedule.decay_every;
    schedule.initial_lr * schedule.decay_factor.powi(stairs as i32)
}
