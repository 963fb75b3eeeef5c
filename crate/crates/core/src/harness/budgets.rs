use rand::Rng;

use crate::dp::{MechanismKind, PrivacyBudget};
use crate::error::{param_err, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetSamplingConfig {
    pub epsilon_range: (f64, f64),
    pub delta_range: (f64, f64),
    pub seed: u64,
}

impl BudgetSamplingConfig {
    /// The Laplace mechanism is pure DP, so its delta range collapses to zero.
    pub fn for_mechanism(
        mechanism: MechanismKind,
        epsilon_range: (f64, f64),
        delta_range: (f64, f64),
        seed: u64,
    ) -> Self {
        let delta_range = match mechanism {
            MechanismKind::Gaussian => delta_range,
            MechanismKind::Laplace => (0.0, 0.0),
        };
        Self {
            epsilon_range,
            delta_range,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (e0, e1) = self.epsilon_range;
        let (d0, d1) = self.delta_range;
        if !(e0 > 0.0 && e0 <= e1 && e1.is_finite()) {
            return param_err(format!("epsilon range [{e0}, {e1}] needs 0 < min <= max"));
        }
        if !(d0 >= 0.0 && d0 <= d1 && d1 < 1.0) {
            return param_err(format!(
                "delta range [{d0}, {d1}] needs 0 <= min <= max < 1"
            ));
        }
        Ok(())
    }
}

/// `epsilon_n` and `delta_n` drawn independently and uniformly from the ranges.
pub fn sample_budgets(
    config: &BudgetSamplingConfig,
    num_clients: usize,
) -> Result<Vec<PrivacyBudget>> {
    config.validate()?;
    let mut r = rng::derive(config.seed, Purpose::Budgets, 0, 0);
    let (e0, e1) = config.epsilon_range;
    let (d0, d1) = config.delta_range;
    (0..num_clients)
        .map(|_| {
            let eps = r.random_range(e0..=e1);
            let delta = r.random_range(d0..=d1);
            PrivacyBudget::new(eps, delta)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_range() {
        let cfg = BudgetSamplingConfig::for_mechanism(
            MechanismKind::Gaussian,
            (1.0, 1.0),
            (1e-5, 1e-5),
            3,
        );
        for b in sample_budgets(&cfg, 20).unwrap() {
            assert_eq!(b.epsilon, 1.0);
            assert_eq!(b.delta, 1e-5);
        }
    }

    #[test]
    fn laplace_forces_zero_delta() {
        let cfg = BudgetSamplingConfig::for_mechanism(
            MechanismKind::Laplace,
            (0.5, 5.0),
            (1e-5, 1e-3),
            3,
        );
        assert!(sample_budgets(&cfg, 50)
            .unwrap()
            .iter()
            .all(|b| b.delta == 0.0));
    }

    #[test]
    fn uniform_mean() {
        let cfg = BudgetSamplingConfig::for_mechanism(
            MechanismKind::Gaussian,
            (0.1, 3.0),
            (1e-5, 1e-4),
            9,
        );
        let n = 10_000;
        let b = sample_budgets(&cfg, n).unwrap();
        let mean = b.iter().map(|b| b.epsilon).sum::<f64>() / n as f64;
        let se = (2.9f64.powi(2) / 12.0 / n as f64).sqrt();
        assert!((mean - 1.55).abs() < 3.0 * se, "mean {mean}");
        assert!(b.iter().all(|b| (0.1..=3.0).contains(&b.epsilon)));
    }

    #[test]
    fn bad_ranges_are_rejected() {
        let cfg =
            BudgetSamplingConfig::for_mechanism(MechanismKind::Gaussian, (2.0, 1.0), (0.0, 0.0), 0);
        assert!(sample_budgets(&cfg, 1).is_err());
        let cfg =
            BudgetSamplingConfig::for_mechanism(MechanismKind::Gaussian, (1.0, 1.0), (0.0, 1.0), 0);
        assert!(sample_budgets(&cfg, 1).is_err());
    }
}
