//! Client-selection planning.
//!
//! A plan assigns each client a participation count `T_n` over a horizon of
//! `H` rounds with `K` participants per round. Plans come from two sources:
//! the closed form that only looks at the noise weights `Phi_n` (used before
//! anything is known about the loss landscape), and the full allocation
//! problem whose coefficients are fitted from stage-one observations.

mod estimate;
mod plan;

pub use estimate::{
    estimate_from_log, estimate_gamma_n, estimate_problem_params, estimate_rho_min,
    golden_section_min, observed_global_loss, predicted_loss_bound, rho_from_counts, winsorize,
    BoundTerms, EstimationContext, FitSettings, FitTrace, LossReport, StageOneLog, StageOneRound,
};
pub use plan::{
    approximate_counts, approximate_plan, approximate_plan_capped, largest_remainder,
    objective_value, optimal_plan, optimal_plan_capped, solve_relaxation, Relaxation,
};

use serde::{Deserialize, Serialize};

use crate::dp::MechanismKind;
use crate::error::{param_err, Error, Result};

/// What the server knows about a client before training starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientMeta {
    pub client_id: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub num_samples: usize,
}

/// Participation counts and the selection probabilities they imply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPlan {
    pub counts: Vec<u64>,
    pub probabilities: Vec<f64>,
    pub horizon_rounds: u64,
    pub per_round_selected: u64,
}

impl SelectionPlan {
    pub fn from_counts(counts: Vec<u64>, horizon_rounds: u64, per_round_selected: u64) -> Self {
        let slots = (horizon_rounds * per_round_selected) as f64;
        let probabilities = counts.iter().map(|&c| c as f64 / slots).collect();
        Self {
            counts,
            probabilities,
            horizon_rounds,
            per_round_selected,
        }
    }

    /// Equal shares of the `K * H` slots, remainder to the lowest ids.
    pub fn uniform(num_clients: usize, horizon_rounds: u64, per_round_selected: u64) -> Self {
        let slots = horizon_rounds * per_round_selected;
        let share = slots as f64 / num_clients as f64;
        let counts = largest_remainder(&vec![share; num_clients], slots);
        Self::from_counts(counts, horizon_rounds, per_round_selected)
    }

    pub fn slots(&self) -> u64 {
        self.horizon_rounds * self.per_round_selected
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Convergence-bound quantities, either fitted from stage one or supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedParams {
    pub gamma_hat_n: Vec<f64>,
    pub rho_min_hat: f64,
    pub lambda: f64,
    pub phi_n: Vec<f64>,
    /// Learning-rate offset `gamma` of the decaying schedule.
    pub gamma: f64,
    pub l_smooth: f64,
    pub mu_convex: f64,
    pub sigma_sq: f64,
    pub init_dist_sq: f64,
    pub omega_a: f64,
    pub omega_b: f64,
}

impl EstimatedParams {
    pub fn num_clients(&self) -> usize {
        self.phi_n.len()
    }

    /// Recompute `omega_a`/`omega_b` for a horizon of `horizon` rounds.
    pub fn set_horizon(&mut self, horizon: u64, k: u64) -> Result<()> {
        let (a, b) = omega_coefficients(
            self.lambda,
            self.gamma,
            self.l_smooth,
            self.mu_convex,
            horizon,
            k,
        )?;
        self.omega_a = a;
        self.omega_b = b;
        Ok(())
    }
}

/// Objective coefficients over a horizon of `horizon` rounds:
/// the noise weight `4 L Lambda / ((gamma+H) H K^2 mu^2)` and the data
/// heterogeneity weight `4 L^2 / ((gamma+H) H K mu^2) + 3 L / (2 H K mu)`.
pub fn omega_coefficients(
    lambda: f64,
    gamma: f64,
    l_smooth: f64,
    mu_convex: f64,
    horizon: u64,
    k: u64,
) -> Result<(f64, f64)> {
    if horizon == 0 || k == 0 {
        return param_err("horizon and K must be >= 1");
    }
    if mu_convex <= 0.0 || !mu_convex.is_finite() {
        return Err(Error::Evaluation(format!(
            "strong convexity must be > 0, got {mu_convex}"
        )));
    }
    let h = horizon as f64;
    let k = k as f64;
    let gh = gamma + h;
    if gh <= 0.0 {
        return Err(Error::Evaluation("gamma + horizon must be > 0".into()));
    }
    let mu2 = mu_convex * mu_convex;
    let omega_a = 4.0 * l_smooth * lambda / (gh * h * k * k * mu2);
    let omega_b =
        4.0 * l_smooth * l_smooth / (gh * h * k * mu2) + 3.0 * l_smooth / (2.0 * h * k * mu_convex);
    Ok((omega_a, omega_b))
}

/// `Lambda` and per-client `Phi_n` for the noise term of the bound.
///
/// `model_dim` is the number of model parameters; the two loss slots carried
/// during stage one only change the sensitivity, not these weights.
pub fn compute_phi_lambda(
    mechanism: MechanismKind,
    model_dim: usize,
    clip_bound: f64,
    c2: f64,
    clients: &[ClientMeta],
) -> Result<(f64, Vec<f64>)> {
    if model_dim == 0 {
        return param_err("model dimension must be >= 1");
    }
    if clip_bound <= 0.0 || !clip_bound.is_finite() {
        return param_err(format!("clip bound must be > 0, got {clip_bound}"));
    }
    let d = model_dim as f64;
    let lambda = match mechanism {
        MechanismKind::Gaussian => {
            if c2 <= 0.0 || !c2.is_finite() {
                return param_err(format!("c2 must be > 0, got {c2}"));
            }
            4.0 * clip_bound * clip_bound * d * c2 * c2
        }
        MechanismKind::Laplace => 8.0 * d * clip_bound * clip_bound,
    };
    let phi = clients
        .iter()
        .map(|c| phi_for(mechanism, c.epsilon, c.delta, c.num_samples))
        .collect::<Result<Vec<_>>>()?;
    Ok((lambda, phi))
}

/// Noise weight of one client with budget `(epsilon, delta)` and `D_n` samples.
pub fn phi_for(
    mechanism: MechanismKind,
    epsilon: f64,
    delta: f64,
    num_samples: usize,
) -> Result<f64> {
    if epsilon <= 0.0 || !epsilon.is_finite() {
        return param_err(format!("epsilon must be > 0, got {epsilon}"));
    }
    if num_samples == 0 {
        return param_err("num_samples must be >= 1");
    }
    let d2 = (num_samples as f64).powi(2);
    match mechanism {
        MechanismKind::Gaussian => {
            if !(delta > 0.0 && delta < 1.0) {
                return param_err(format!(
                    "gaussian mechanism needs delta in (0, 1), got {delta}"
                ));
            }
            Ok((1.0 / delta).ln() / (d2 * epsilon * epsilon))
        }
        MechanismKind::Laplace => Ok(1.0 / (d2 * epsilon * epsilon)),
    }
}

/// Selection skew of weights `p_n` against the uniform average of excess
/// local losses. Diagnostic only.
pub fn selection_skew(
    weights: &[f64],
    local_losses: &[f64],
    local_optima: &[f64],
    global_loss: f64,
) -> Result<f64> {
    let n = weights.len();
    if local_losses.len() != n || local_optima.len() != n || n == 0 {
        return param_err("selection_skew: length mismatch");
    }
    let numerator: f64 = weights
        .iter()
        .zip(local_losses.iter().zip(local_optima))
        .map(|(p, (f, fs))| p * (f - fs))
        .sum();
    let denominator = global_loss - local_optima.iter().sum::<f64>() / n as f64;
    if !(denominator > 0.0) {
        return Err(Error::Evaluation(format!(
            "selection skew denominator must be > 0, got {denominator}"
        )));
    }
    Ok(numerator / denominator)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(epsilon: f64, delta: f64, num_samples: usize) -> ClientMeta {
        ClientMeta {
            client_id: 0,
            epsilon,
            delta,
            num_samples,
        }
    }

    #[test]
    fn phi_lambda_gaussian() {
        let e = std::f64::consts::E;
        let (lambda, phi) = compute_phi_lambda(
            MechanismKind::Gaussian,
            2,
            1.0,
            1.0,
            &[meta(1.0, 1.0 / e, 10)],
        )
        .unwrap();
        assert!((lambda - 8.0).abs() < 1e-12);
        assert!((phi[0] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn phi_lambda_laplace() {
        let (lambda, phi) =
            compute_phi_lambda(MechanismKind::Laplace, 3, 2.0, 1.0, &[meta(2.0, 0.0, 5)]).unwrap();
        assert_eq!(lambda, 96.0);
        assert!((phi[0] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn phi_symmetry_and_errors() {
        let c = meta(0.7, 1e-5, 40);
        let (_, phi) = compute_phi_lambda(MechanismKind::Gaussian, 4, 1.0, 1.0, &[c, c]).unwrap();
        assert_eq!(phi[0], phi[1]);
        assert!(
            compute_phi_lambda(MechanismKind::Gaussian, 4, 1.0, 1.0, &[meta(1.0, 0.0, 5)]).is_err()
        );
        assert!(
            compute_phi_lambda(MechanismKind::Laplace, 4, 1.0, 1.0, &[meta(0.0, 0.0, 5)]).is_err()
        );
    }

    #[test]
    fn omega_matches_formula() {
        let (a, b) = omega_coefficients(10.0, 2.0, 3.0, 0.5, 8, 2).unwrap();
        let expect_a = 4.0 * 3.0 * 10.0 / (10.0 * 8.0 * 4.0 * 0.25);
        let expect_b = 4.0 * 9.0 / (10.0 * 8.0 * 2.0 * 0.25) + 9.0 / (2.0 * 8.0 * 2.0 * 0.5);
        assert!((a - expect_a).abs() < 1e-12);
        assert!((b - expect_b).abs() < 1e-12);
        assert!(omega_coefficients(1.0, 1.0, 1.0, 0.0, 8, 2).is_err());
    }

    #[test]
    fn skew_examples() {
        let rho = selection_skew(&[0.5, 0.5], &[3.0, 1.0], &[0.0, 0.0], 2.0).unwrap();
        assert!((rho - 1.0).abs() < 1e-15);
        let rho = selection_skew(&[1.0, 0.0], &[2.0, 0.0], &[0.0, 0.0], 1.0).unwrap();
        assert!((rho - 2.0).abs() < 1e-15);
        let rho = selection_skew(&[1.0, 0.0, 0.0], &[5.0, 1.0, 0.0], &[0.0; 3], 2.0).unwrap();
        assert!(rho >= 1.0);
        assert!(selection_skew(&[1.0], &[1.0], &[1.0], 1.0).is_err());
    }

    #[test]
    fn uniform_plan_sums() {
        let p = SelectionPlan::uniform(3, 10, 2);
        assert_eq!(p.counts, vec![7, 7, 6]);
        assert_eq!(p.total(), 20);
        assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
