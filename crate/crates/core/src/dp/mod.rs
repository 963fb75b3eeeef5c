//! Noise calibration for the Gaussian and Laplace mechanisms under linear
//! composition, plus sensitivity bookkeeping for clipped gradients.

mod budget;
mod clip;
mod noise;

pub use budget::{consume_budget, Consumption, PrivacyBudget};
pub use clip::{clip_in_place, clip_per_sample_gradient, norm, ClipConfig, NormKind};
pub use noise::sample_noise;

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{param_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismKind {
    Gaussian,
    Laplace,
}

impl MechanismKind {
    /// Exponent of the participation count in the noise-variance term:
    /// the Gaussian variance grows linearly with the number of releases,
    /// the Laplace variance quadratically.
    pub fn exponent(self) -> u32 {
        match self {
            MechanismKind::Gaussian => 1,
            MechanismKind::Laplace => 2,
        }
    }

    /// Norm used for clipping so that the clip bound is the sensitivity norm
    /// of the mechanism.
    pub fn clip_norm(self) -> NormKind {
        match self {
            MechanismKind::Gaussian => NormKind::L2,
            MechanismKind::Laplace => NormKind::L1,
        }
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MechanismKind::Gaussian => f.write_str("gaussian"),
            MechanismKind::Laplace => f.write_str("laplace"),
        }
    }
}

impl FromStr for MechanismKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "gm" => Ok(MechanismKind::Gaussian),
            "laplace" | "lm" => Ok(MechanismKind::Laplace),
            other => Err(Error::Parameter(format!("unknown mechanism `{other}`"))),
        }
    }
}

/// Calibrated noise for one client release.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mechanism: MechanismKind,
    /// Sensitivity of the released vector (L2 for Gaussian, L1 for Laplace).
    pub sensitivity: f64,
    /// Per-coordinate standard deviation (Gaussian) or scale `b` (Laplace).
    pub scale: f64,
    pub per_round_epsilon: f64,
    pub per_round_delta: f64,
    pub planned_rounds: u64,
}

impl NoiseSpec {
    /// Calibrate against a stage budget `(epsilon, delta)` spread evenly over
    /// `planned_rounds` releases.
    pub fn calibrate(
        mechanism: MechanismKind,
        sensitivity: f64,
        epsilon: f64,
        delta: f64,
        planned_rounds: u64,
        c2: f64,
    ) -> Result<Self> {
        let scale = match mechanism {
            MechanismKind::Gaussian => {
                gaussian_sigma(sensitivity, epsilon, delta, planned_rounds, c2)?
            }
            MechanismKind::Laplace => laplace_scale(sensitivity, epsilon, planned_rounds)?,
        };
        let per_round_delta = match mechanism {
            MechanismKind::Gaussian => delta / planned_rounds as f64,
            MechanismKind::Laplace => 0.0,
        };
        Ok(Self {
            mechanism,
            sensitivity,
            scale,
            per_round_epsilon: epsilon / planned_rounds as f64,
            per_round_delta,
            planned_rounds,
        })
    }

    /// A spec that releases the exact value. Used by noise-free runs.
    pub fn silent(mechanism: MechanismKind) -> Self {
        Self {
            mechanism,
            sensitivity: 0.0,
            scale: 0.0,
            per_round_epsilon: 0.0,
            per_round_delta: 0.0,
            planned_rounds: 1,
        }
    }

    /// Variance of a single coordinate of the noise.
    pub fn coordinate_variance(&self) -> f64 {
        match self.mechanism {
            MechanismKind::Gaussian => self.scale * self.scale,
            MechanismKind::Laplace => 2.0 * self.scale * self.scale,
        }
    }
}

fn check_sensitivity(sensitivity: f64) -> Result<()> {
    if !sensitivity.is_finite() || sensitivity < 0.0 {
        return param_err(format!(
            "sensitivity must be finite and >= 0, got {sensitivity}"
        ));
    }
    Ok(())
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return param_err(format!("epsilon must be finite and > 0, got {epsilon}"));
    }
    Ok(())
}

fn check_rounds(planned_rounds: u64) -> Result<()> {
    if planned_rounds == 0 {
        return param_err("planned rounds must be >= 1");
    }
    Ok(())
}

/// Gaussian standard deviation for `planned_rounds` releases under a total
/// `(epsilon, delta)` budget: `c2 * sensitivity * sqrt(T ln(1/delta)) / epsilon`.
pub fn gaussian_sigma(
    sensitivity: f64,
    total_epsilon: f64,
    total_delta: f64,
    planned_rounds: u64,
    c2: f64,
) -> Result<f64> {
    check_sensitivity(sensitivity)?;
    check_epsilon(total_epsilon)?;
    check_rounds(planned_rounds)?;
    if !(total_delta > 0.0 && total_delta < 1.0) {
        return param_err(format!("delta must lie in (0, 1), got {total_delta}"));
    }
    if !c2.is_finite() || c2 <= 0.0 {
        return param_err(format!("c2 must be finite and > 0, got {c2}"));
    }
    let log_term = (planned_rounds as f64 * (1.0 / total_delta).ln()).sqrt();
    Ok(c2 * sensitivity * log_term / total_epsilon)
}

/// Laplace scale for `planned_rounds` releases under a total epsilon:
/// `T * sensitivity / epsilon`.
pub fn laplace_scale(sensitivity: f64, total_epsilon: f64, planned_rounds: u64) -> Result<f64> {
    check_sensitivity(sensitivity)?;
    check_epsilon(total_epsilon)?;
    check_rounds(planned_rounds)?;
    Ok(planned_rounds as f64 * sensitivity / total_epsilon)
}

/// Sensitivity of the scaled, clipped mean gradient `eta * grad F_n`.
///
/// With `include_loss_terms` the release also carries the two scaled loss
/// values reported during stage one, each bounded by `loss_cap / D_n`.
pub fn gradient_sensitivity(
    _mechanism: MechanismKind,
    learning_rate: f64,
    clip_bound: f64,
    num_samples: usize,
    loss_cap: f64,
    include_loss_terms: bool,
) -> Result<f64> {
    if num_samples == 0 {
        return param_err("num_samples must be >= 1");
    }
    if !learning_rate.is_finite() || learning_rate < 0.0 {
        return param_err(format!(
            "learning rate must be finite and >= 0, got {learning_rate}"
        ));
    }
    if !clip_bound.is_finite() || clip_bound <= 0.0 {
        return param_err(format!(
            "clip bound must be finite and > 0, got {clip_bound}"
        ));
    }
    if !loss_cap.is_finite() || loss_cap < 0.0 {
        return param_err(format!("loss cap must be finite and >= 0, got {loss_cap}"));
    }
    let d = num_samples as f64;
    let grad = 2.0 * learning_rate * clip_bound;
    if include_loss_terms {
        Ok((grad + 2.0 * learning_rate * loss_cap) / d)
    } else {
        Ok(grad / d)
    }
}

/// Closed-form `E||Z||^2` of the gradient noise of one release.
///
/// Uses the total `epsilon`/`delta` of `budget`; for a stage-two calibration
/// pass a budget whose totals are the remaining amounts.
#[allow(clippy::too_many_arguments)]
pub fn expected_noise_sq_norm(
    mechanism: MechanismKind,
    learning_rate: f64,
    clip_bound: f64,
    dimension: usize,
    planned_rounds: u64,
    budget: &PrivacyBudget,
    num_samples: usize,
    c2: f64,
) -> Result<f64> {
    let sensitivity = gradient_sensitivity(
        mechanism,
        learning_rate,
        clip_bound,
        num_samples,
        0.0,
        false,
    )?;
    check_epsilon(budget.epsilon)?;
    check_rounds(planned_rounds)?;
    let eta = learning_rate;
    let b = clip_bound;
    let d = dimension as f64;
    let t = planned_rounds as f64;
    let dn = num_samples as f64;
    let eps = budget.epsilon;
    match mechanism {
        MechanismKind::Gaussian => {
            if !(budget.delta > 0.0 && budget.delta < 1.0) {
                return param_err("gaussian mechanism needs delta in (0, 1)");
            }
            if !c2.is_finite() || c2 <= 0.0 {
                return param_err(format!("c2 must be finite and > 0, got {c2}"));
            }
            let _ = sensitivity;
            let ln = (1.0 / budget.delta).ln();
            Ok(4.0 * eta * eta * b * b * d * c2 * c2 * t * ln / (dn * dn * eps * eps))
        }
        MechanismKind::Laplace => Ok(8.0 * d * b * b * eta * eta * t * t / (dn * dn * eps * eps)),
    }
}
