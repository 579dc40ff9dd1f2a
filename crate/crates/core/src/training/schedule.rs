use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weight of the score-matching term over training: linear from `initial`
/// to `final_value` across the first `fraction` of the steps, then flat.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSchedule {
    pub initial: f64,
    pub final_value: f64,
    pub fraction: f64,
}

impl Default for LambdaSchedule {
    fn default() -> Self {
        Self {
            initial: 1.0,
            final_value: 0.0,
            fraction: 0.8,
        }
    }
}

impl LambdaSchedule {
    pub fn constant(value: f64) -> Self {
        Self {
            initial: value,
            final_value: value,
            fraction: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.initial.is_finite()
            && self.final_value.is_finite()
            && self.final_value >= 0.0
            && self.initial >= self.final_value
            && (0.0..=1.0).contains(&self.fraction);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "lambda schedule must satisfy initial >= final >= 0 and fraction in [0, 1], got {self:?}"
            )))
        }
    }

    pub fn at(&self, step: usize, total_steps: usize) -> f64 {
        let horizon = self.fraction * total_steps as f64;
        let s = step as f64;
        if horizon <= 0.0 || s >= horizon {
            self.final_value
        } else {
            self.initial + (self.final_value - self.initial) * s / horizon
        }
    }
}

/// Free-function form of [`LambdaSchedule::at`].
pub fn anneal_lambda(schedule: &LambdaSchedule, step: usize, total_steps: usize) -> f64 {
    schedule.at(step, total_steps)
}
