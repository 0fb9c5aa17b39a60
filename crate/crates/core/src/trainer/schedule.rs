use crate::error::{CcdfError, Result};

pub const DEFAULT_WARMUP_FRACTION: f64 = 0.1;

/// Linear ramp `lr_min -> lr_max` over the first `warmup_fraction` of the
/// steps, then half-cosine decay back to `lr_min` at the last step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmupCosine {
    pub lr_min: f64,
    pub lr_max: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
}

impl WarmupCosine {
    pub fn new(total_steps: usize, lr_min: f64, lr_max: f64, warmup_fraction: f64) -> Result<Self> {
        if total_steps == 0 {
            return Err(CcdfError::InvalidArgument("schedule needs at least one step".into()));
        }
        if !(lr_min > 0.0 && lr_min <= lr_max && lr_max.is_finite()) {
            return Err(CcdfError::InvalidArgument(format!(
                "learning rates must satisfy 0 < lr_min <= lr_max, got {lr_min}, {lr_max}"
            )));
        }
        if !(0.0..1.0).contains(&warmup_fraction) {
            return Err(CcdfError::InvalidArgument(format!("warmup fraction {warmup_fraction} outside [0, 1)")));
        }
        let warmup_steps = (warmup_fraction * total_steps as f64).ceil() as usize;
        Ok(Self {
            lr_min,
            lr_max,
            total_steps,
            warmup_steps,
        })
    }

    pub fn at(&self, step: usize) -> Result<f64> {
        if step >= self.total_steps {
            return Err(CcdfError::InvalidArgument(format!(
                "step {step} outside 0..{}",
                self.total_steps
            )));
        }
        let span = self.lr_max - self.lr_min;
        if step < self.warmup_steps {
            return Ok(self.lr_min + span * step as f64 / self.warmup_steps as f64);
        }
        let decay_steps = self.total_steps - 1 - self.warmup_steps;
        if decay_steps == 0 {
            return Ok(self.lr_min);
        }
        let progress = (step - self.warmup_steps) as f64 / decay_steps as f64;
        Ok(self.lr_min + 0.5 * span * (1.0 + (std::f64::consts::PI * progress).cos()))
    }
}

/// Learning rate at `step` of `total_steps` with the default 10% warmup.
pub fn lr_at_step(step: usize, total_steps: usize, lr_min: f64, lr_max: f64) -> Result<f64> {
    WarmupCosine::new(total_steps, lr_min, lr_max, DEFAULT_WARMUP_FRACTION)?.at(step)
}
