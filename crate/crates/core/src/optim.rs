//! SGD with momentum and weight decay, and staged learning-rate schedules.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

#[derive(Debug, Clone)]
pub struct SgdState<T> {
    pub lr: T,
    pub momentum: T,
    pub weight_decay: T,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new(lr: T, momentum: T, weight_decay: T) -> Result<Self> {
        if !(lr > T::zero()) {
            return Err(Error::param(format!("learning rate must be positive, got {lr}")));
        }
        Ok(SgdState {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        })
    }

    pub fn velocity(&self) -> &[Vec<T>] {
        &self.velocity
    }

    /// `v <- momentum*v - lr*(grad + weight_decay*param); param <- param + v`.
    ///
    /// Velocity buffers are created on the first call and must keep the
    /// same shapes afterwards.
    pub fn step(&mut self, params: &mut [&mut Tensor4<T>], grads: &[&Tensor4<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::mismatch(format!("{} gradients", params.len()), grads.len()));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::mismatch(
                format!("{} velocity buffers", self.velocity.len()),
                params.len(),
            ));
        }
        for ((param, grad), vel) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            if param.shape() != grad.shape() || vel.len() != param.len() {
                return Err(Error::mismatch(param.shape(), grad.shape()));
            }
            for ((p, &g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(vel.iter_mut()) {
                *v = self.momentum * *v - self.lr * (g + self.weight_decay * *p);
                *p += *v;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage {
    pub epochs: usize,
    pub lr: f64,
}

/// Consecutive `(epochs, lr)` stages with strictly decreasing rates.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    stages: Vec<Stage>,
}

impl LrSchedule {
    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::param("schedule needs at least one stage"));
        }
        for s in &stages {
            if s.epochs == 0 || !(s.lr > 0.0) {
                return Err(Error::param(format!("bad schedule stage {}@{}", s.epochs, s.lr)));
            }
        }
        if stages.windows(2).any(|w| w[1].lr >= w[0].lr) {
            return Err(Error::param("schedule learning rates must strictly decrease"));
        }
        Ok(LrSchedule { stages })
    }

    /// 20 epochs at 1e-3, 4 at 1e-4, 1 at 1e-5.
    pub fn mnist() -> Self {
        Self::new(vec![
            Stage { epochs: 20, lr: 1e-3 },
            Stage { epochs: 4, lr: 1e-4 },
            Stage { epochs: 1, lr: 1e-5 },
        ])
        .expect("valid")
    }

    /// 120 epochs at 1e-3, 20 at 1e-4, 10 at 1e-5.
    pub fn cifar() -> Self {
        Self::new(vec![
            Stage { epochs: 120, lr: 1e-3 },
            Stage { epochs: 20, lr: 1e-4 },
            Stage { epochs: 10, lr: 1e-5 },
        ])
        .expect("valid")
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn total_epochs(&self) -> usize {
        self.stages.iter().map(|s| s.epochs).sum()
    }

    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        let mut end = 0;
        for s in &self.stages {
            end += s.epochs;
            if epoch < end {
                return Ok(s.lr);
            }
        }
        Err(Error::IndexOutOfRange {
            what: "epoch",
            index: epoch,
            limit: end,
        })
    }

    /// Keeps the stage structure but stops after `epochs` in total.
    pub fn truncated(&self, epochs: usize) -> Result<Self> {
        let mut left = epochs;
        let mut stages = Vec::new();
        for s in &self.stages {
            if left == 0 {
                break;
            }
            let take = s.epochs.min(left);
            stages.push(Stage { epochs: take, lr: s.lr });
            left -= take;
        }
        Self::new(stages)
    }
}

pub fn schedule_lr(sched: &LrSchedule, epoch: usize) -> Result<f64> {
    sched.lr_at(epoch)
}

impl FromStr for LrSchedule {
    type Err = Error;

    /// Parses `"20@1e-3,4@1e-4,1@1e-5"`.
    fn from_str(s: &str) -> Result<Self> {
        let stages = s
            .split(',')
            .map(|part| {
                let part = part.trim();
                let (e, lr) = part
                    .split_once('@')
                    .ok_or_else(|| Error::param(format!("schedule stage `{part}` is not EPOCHS@LR")))?;
                let epochs = e
                    .trim()
                    .parse()
                    .map_err(|_| Error::param(format!("bad epoch count in `{part}`")))?;
                let lr = lr
                    .trim()
                    .parse()
                    .map_err(|_| Error::param(format!("bad learning rate in `{part}`")))?;
                Ok(Stage { epochs, lr })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(stages)
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.stages.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}@{:e}", s.epochs, s.lr)?;
        }
        Ok(())
    }
}
