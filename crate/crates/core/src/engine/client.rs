use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::model::{local_gradient, local_loss, ModelState};
use crate::dp::{
    gradient_sensitivity, norm, sample_noise, ClipConfig, Consumption, MechanismKind, NoiseSpec,
    PrivacyBudget,
};
use crate::error::{param_err, Result};

/// A simulated client: local data plus its running privacy budget.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: usize,
    pub data: Dataset,
    pub budget: PrivacyBudget,
}

/// How a client releases its update in the current stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageConfig {
    pub mechanism: MechanismKind,
    pub clip: ClipConfig,
    pub loss_cap: f64,
    pub c2: f64,
    /// Attach noisy loss values to the release (stage one of the biased scheme).
    pub report_losses: bool,
    /// Releases planned for this client in the stage.
    pub planned_rounds: u64,
    /// Budget the stage's releases share.
    pub stage_epsilon: f64,
    pub stage_delta: f64,
    /// Release exact values while still accounting for the budget.
    pub zero_noise: bool,
    /// Skip privacy accounting altogether (non-private training).
    pub non_private: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedLosses {
    /// Noisy loss of the global model before local training.
    pub before: f64,
    /// Noisy loss of the locally updated model.
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub noisy_gradient: Vec<f64>,
    pub losses: Option<ReportedLosses>,
    pub noise: NoiseSpec,
    pub consumption: Consumption,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClientOutcome {
    Update(ClientUpdate),
    /// The client's epsilon is spent; it sends nothing.
    Refused,
}

/// Noisy loss reconstruction: `(eta * F + z) / eta`. Zero noise returns `F`
/// untouched rather than its rounded round trip.
pub fn distort_loss(loss: f64, learning_rate: f64, noise: f64) -> f64 {
    if noise == 0.0 {
        return loss;
    }
    (learning_rate * loss + noise) / learning_rate
}

/// One local step of a selected client: clipped gradient, optional loss
/// reports, calibrated noise, and the budget slice for this release.
pub fn client_round<R: Rng + ?Sized>(
    client: &mut ClientState,
    model: &ModelState,
    learning_rate: f64,
    stage: &StageConfig,
    rng: &mut R,
) -> Result<ClientOutcome> {
    if !stage.non_private && client.budget.is_exhausted() {
        return Ok(ClientOutcome::Refused);
    }
    if learning_rate <= 0.0 || !learning_rate.is_finite() {
        return param_err(format!("learning rate must be > 0, got {learning_rate}"));
    }
    let gradient = local_gradient(model, &client.data, learning_rate, &stage.clip)?;
    let losses = if stage.report_losses {
        let before = local_loss(model, &client.data, stage.loss_cap)?;
        let mut local = model.clone();
        for (w, g) in local.weights.iter_mut().zip(&gradient) {
            *w -= g;
        }
        let after = local_loss(&local, &client.data, stage.loss_cap)?;
        Some((before, after))
    } else {
        None
    };

    let noise = if stage.non_private {
        NoiseSpec::silent(stage.mechanism)
    } else {
        if stage.planned_rounds == 0 {
            return param_err(format!(
                "client {} has no planned releases this stage",
                client.id
            ));
        }
        let sensitivity = gradient_sensitivity(
            stage.mechanism,
            learning_rate,
            stage.clip.bound,
            client.data.len(),
            stage.loss_cap,
            stage.report_losses,
        )?;
        let mut spec = NoiseSpec::calibrate(
            stage.mechanism,
            sensitivity,
            stage.stage_epsilon,
            stage.stage_delta,
            stage.planned_rounds,
            stage.c2,
        )?;
        if stage.zero_noise {
            spec.scale = 0.0;
        }
        spec
    };

    let dim = gradient.len();
    let extra = if losses.is_some() { 2 } else { 0 };
    let z = sample_noise(&noise, dim + extra, rng)?;
    let noisy_gradient: Vec<f64> = gradient.iter().zip(&z).map(|(g, n)| g + n).collect();
    let losses = losses.map(|(before, after)| ReportedLosses {
        before: distort_loss(before, learning_rate, z[dim]),
        after: distort_loss(after, learning_rate, z[dim + 1]),
    });

    let consumption = if stage.non_private {
        Consumption {
            epsilon: 0.0,
            delta: 0.0,
            exhausted: false,
        }
    } else {
        client
            .budget
            .consume(noise.per_round_epsilon, noise.per_round_delta)
    };
    log::trace!(
        "client {} released |g|={:.4e} scale={:.4e}",
        client.id,
        norm(&noisy_gradient, stage.clip.norm_kind),
        noise.scale
    );
    Ok(ClientOutcome::Update(ClientUpdate {
        noisy_gradient,
        losses,
        noise,
        consumption,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::data::Targets;
    use crate::rng;

    fn client(eps: f64) -> ClientState {
        let data = Dataset::new(
            vec![vec![1.0, 0.5], vec![-0.5, 2.0], vec![0.3, 0.3]],
            Targets::Real(vec![1.0, -1.0, 0.5]),
        )
        .unwrap();
        ClientState {
            id: 0,
            data,
            budget: PrivacyBudget::new(eps, 1e-5).unwrap(),
        }
    }

    fn stage(report: bool, zero: bool) -> StageConfig {
        StageConfig {
            mechanism: MechanismKind::Gaussian,
            clip: ClipConfig::for_mechanism(MechanismKind::Gaussian, 1.0),
            loss_cap: 10.0,
            c2: 1.0,
            report_losses: report,
            planned_rounds: 4,
            stage_epsilon: 2.0,
            stage_delta: 1e-5,
            zero_noise: zero,
            non_private: false,
        }
    }

    #[test]
    fn loss_distortion_example() {
        assert!((distort_loss(2.0, 0.5, 0.1) - 2.2).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_releases_exact_values_and_spends_budget() {
        let mut c = client(2.0);
        let m = ModelState::for_dataset(&c.data);
        let mut r = rng::client_round(1, 0, 1);
        let ClientOutcome::Update(u) =
            client_round(&mut c, &m, 0.1, &stage(true, true), &mut r).unwrap()
        else {
            panic!("refused")
        };
        let g = local_gradient(&m, &c.data, 0.1, &stage(true, true).clip).unwrap();
        assert_eq!(u.noisy_gradient, g);
        let l = u.losses.unwrap();
        assert_eq!(l.before, local_loss(&m, &c.data, 10.0).unwrap());
        assert!((c.budget.epsilon_remaining - 1.5).abs() < 1e-12);
    }

    #[test]
    fn exhausted_client_refuses() {
        let mut c = client(2.0);
        let m = ModelState::for_dataset(&c.data);
        for t in 1..=4 {
            let mut r = rng::client_round(1, 0, t);
            let out = client_round(&mut c, &m, 0.1, &stage(false, false), &mut r).unwrap();
            assert!(matches!(out, ClientOutcome::Update(_)));
        }
        assert!(c.budget.is_exhausted());
        let mut r = rng::client_round(1, 0, 5);
        let out = client_round(&mut c, &m, 0.1, &stage(false, false), &mut r).unwrap();
        assert_eq!(out, ClientOutcome::Refused);
    }

    #[test]
    fn loss_reporting_raises_noise() {
        let c = client(2.0);
        let m = ModelState::for_dataset(&c.data);
        let mut a = c.clone();
        let mut b = c.clone();
        let mut r = rng::client_round(1, 0, 1);
        let ClientOutcome::Update(with) =
            client_round(&mut a, &m, 0.1, &stage(true, false), &mut r).unwrap()
        else {
            panic!()
        };
        let ClientOutcome::Update(without) =
            client_round(&mut b, &m, 0.1, &stage(false, false), &mut r).unwrap()
        else {
            panic!()
        };
        assert!(with.noise.scale > without.noise.scale);
        assert_eq!(with.noisy_gradient.len(), 3);
    }
}
