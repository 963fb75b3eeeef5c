use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};

/// Remaining budget below this fraction of the total counts as spent. Slices
/// of `epsilon / T` summed `T` times rarely land exactly on zero.
const EXHAUSTION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
    pub epsilon_remaining: f64,
    pub delta_remaining: f64,
}

/// What one call to [`PrivacyBudget::consume`] actually took.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Consumption {
    pub epsilon: f64,
    pub delta: f64,
    pub exhausted: bool,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return param_err(format!("epsilon must be finite and > 0, got {epsilon}"));
        }
        if !(0.0..1.0).contains(&delta) {
            return param_err(format!("delta must lie in [0, 1), got {delta}"));
        }
        Ok(Self {
            epsilon,
            delta,
            epsilon_remaining: epsilon,
            delta_remaining: delta,
        })
    }

    pub fn is_exhausted(&self) -> bool {
        self.epsilon_remaining <= 0.0
    }

    pub fn epsilon_spent(&self) -> f64 {
        self.epsilon - self.epsilon_remaining
    }

    /// Subtract one per-round slice. Over-consumption clamps to zero.
    pub fn consume(&mut self, epsilon_slice: f64, delta_slice: f64) -> Consumption {
        let eps_take = epsilon_slice.max(0.0).min(self.epsilon_remaining);
        let delta_take = delta_slice.max(0.0).min(self.delta_remaining);
        self.epsilon_remaining -= eps_take;
        self.delta_remaining -= delta_take;
        if self.epsilon_remaining <= EXHAUSTION_TOLERANCE * self.epsilon {
            self.epsilon_remaining = 0.0;
        }
        if self.delta_remaining <= EXHAUSTION_TOLERANCE * self.delta {
            self.delta_remaining = 0.0;
        }
        Consumption {
            epsilon: eps_take,
            delta: delta_take,
            exhausted: self.is_exhausted(),
        }
    }
}

/// Functional form of [`PrivacyBudget::consume`].
pub fn consume_budget(
    budget: &PrivacyBudget,
    per_round_epsilon: f64,
    per_round_delta: f64,
) -> (PrivacyBudget, bool) {
    let mut next = *budget;
    let c = next.consume(per_round_epsilon, per_round_delta);
    (next, c.exhausted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_division_exhausts() {
        let mut b = PrivacyBudget::new(1.0, 0.0).unwrap();
        for i in 0..4 {
            let (next, exhausted) = consume_budget(&b, 0.25, 0.0);
            b = next;
            assert_eq!(exhausted, i == 3);
        }
        assert_eq!(b.epsilon_remaining, 0.0);
    }

    #[test]
    fn zero_slice_is_noop() {
        let b = PrivacyBudget::new(1.0, 1e-5).unwrap();
        let (next, exhausted) = consume_budget(&b, 0.0, 0.0);
        assert_eq!(next, b);
        assert!(!exhausted);
    }

    #[test]
    fn over_consumption_clamps() {
        let mut b = PrivacyBudget::new(1.0, 0.0).unwrap();
        b.epsilon_remaining = 0.1;
        let c = b.consume(0.25, 0.0);
        assert_eq!(b.epsilon_remaining, 0.0);
        assert!(c.exhausted);
        assert!((c.epsilon - 0.1).abs() < 1e-15);
    }

    #[test]
    fn rejects_invalid_budgets() {
        assert!(PrivacyBudget::new(0.0, 0.1).is_err());
        assert!(PrivacyBudget::new(1.0, 1.0).is_err());
        assert!(PrivacyBudget::new(1.0, -0.1).is_err());
    }

    proptest! {
        #[test]
        fn planned_slices_exhaust_exactly(eps in 1e-3f64..50.0, delta in 0.0f64..0.5, rounds in 1u64..400) {
            let mut b = PrivacyBudget::new(eps, delta).unwrap();
            let slice = eps / rounds as f64;
            let dslice = delta / rounds as f64;
            let mut spent = 0.0;
            for i in 0..rounds {
                prop_assert!(!b.is_exhausted());
                let c = b.consume(slice, dslice);
                spent += c.epsilon;
                prop_assert_eq!(c.exhausted, i + 1 == rounds);
            }
            prop_assert!(b.epsilon_remaining.abs() <= 1e-9);
            prop_assert!(spent <= eps + 1e-9);
            prop_assert!(b.epsilon_remaining >= 0.0 && b.epsilon_remaining <= b.epsilon);
            prop_assert!(b.delta_remaining >= 0.0 && b.delta_remaining <= b.delta);
        }
    }
}
