//! Learning-rate schedule: linear warmup, then constant (or an optional
//! linear decay to zero).

use serde::{Deserialize, Serialize};

/// Behavior of the learning rate once warmup has finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decay {
    /// Stay at `base_lr` for the rest of training.
    #[default]
    Constant,
    /// Fall linearly from `base_lr` to zero at `total_steps`.
    Linear,
}

/// Warmup schedule over a fixed number of optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub decay: Decay,
}

impl LrSchedule {
    /// Constant-after-warmup schedule.
    ///
    /// Panics if `base_lr` is not positive, `total_steps` is zero, or the
    /// warmup extends past the end of training; callers derive these values
    /// from validated configuration.
    pub fn new(base_lr: f64, warmup_steps: u64, total_steps: u64) -> Self {
        Self::with_decay(base_lr, warmup_steps, total_steps, Decay::Constant)
    }

    pub fn with_decay(base_lr: f64, warmup_steps: u64, total_steps: u64, decay: Decay) -> Self {
        assert!(base_lr > 0.0, "base_lr must be positive, got {base_lr}");
        assert!(total_steps > 0, "total_steps must be positive");
        assert!(
            warmup_steps <= total_steps,
            "warmup ({warmup_steps}) cannot exceed total steps ({total_steps})"
        );
        LrSchedule {
            base_lr,
            warmup_steps,
            total_steps,
            decay,
        }
    }
}

/// Learning rate at an optimizer step: a linear ramp from 0 to `base_lr`
/// over `warmup_steps`, then either constant or linearly decaying.
pub fn lr_at(schedule: &LrSchedule, step: u64) -> f64 {
    if step < schedule.warmup_steps {
        return schedule.base_lr * step as f64 / schedule.warmup_steps as f64;
    }
    match schedule.decay {
        Decay::Constant => schedule.base_lr,
        Decay::Linear => {
            let span = schedule.total_steps - schedule.warmup_steps;
            if span == 0 || step >= schedule.total_steps {
                return 0.0;
            }
            schedule.base_lr * (schedule.total_steps - step) as f64 / span as f64
        }
    }
}
