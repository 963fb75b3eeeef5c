use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LearningRateSchedule {
    Constant {
        rate: f64,
    },
    /// `initial / (1 + t / horizon)`.
    ExperimentDecay {
        initial: f64,
        horizon: f64,
    },
    /// `2 / (mu (t + gamma))`.
    TheoryDecay {
        mu: f64,
        gamma: f64,
    },
}

impl LearningRateSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LearningRateSchedule::Constant { rate } => rate > 0.0 && rate.is_finite(),
            LearningRateSchedule::ExperimentDecay { initial, horizon } => {
                initial > 0.0 && initial.is_finite() && horizon > 0.0 && horizon.is_finite()
            }
            LearningRateSchedule::TheoryDecay { mu, gamma } => {
                mu > 0.0 && mu.is_finite() && gamma >= 0.0 && gamma.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            param_err(format!(
                "learning-rate schedule has non-positive parameters: {self:?}"
            ))
        }
    }

    /// Rate of global round `t` (1-based).
    pub fn rate(&self, t: usize) -> f64 {
        let t = t as f64;
        match *self {
            LearningRateSchedule::Constant { rate } => rate,
            LearningRateSchedule::ExperimentDecay { initial, horizon } => {
                initial / (1.0 + t / horizon)
            }
            LearningRateSchedule::TheoryDecay { mu, gamma } => 2.0 / (mu * (t + gamma)),
        }
    }
}
