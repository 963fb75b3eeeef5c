//! Federated training: models, client releases, aggregation and the global
//! loop shared by the biased-selection scheme and the baselines.

mod client;
mod data;
mod history;
mod model;
mod schedule;
mod server;

pub use client::{
    client_round, distort_loss, ClientOutcome, ClientState, ClientUpdate, ReportedLosses,
    StageConfig,
};
pub use data::{Dataset, LocalDataset, Targets};
pub use history::{
    read_partial, stage_one_log, write_line, ClientLedger, HistoryLine, PartialHistory,
    RoundRecord, RunHeader, RunHistory, RunSummary, UpdateMeta,
};
pub use model::{local_gradient, local_loss, Metrics, ModelKind, ModelState};
pub use schedule::LearningRateSchedule;
pub use server::{aggregate, aggregate_weighted, sample_selection};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::{norm, ClipConfig, MechanismKind};
use crate::error::{param_err, Error, Result};
use crate::rng;
use crate::selection::{
    approximate_plan_capped, compute_phi_lambda, estimate_from_log, optimal_plan_capped, phi_for,
    ClientMeta, EstimatedParams, EstimationContext, FitSettings, FitTrace, LossReport,
    SelectionPlan, StageOneLog, StageOneRound,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    DpflBcs,
    FedSgd,
    UniformDp,
    WeiAvg,
}

/// The comparison methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    FedSgd,
    UniformDp,
    WeiAvg,
}

impl From<Baseline> for Algorithm {
    fn from(b: Baseline) -> Self {
        match b {
            Baseline::FedSgd => Algorithm::FedSgd,
            Baseline::UniformDp => Algorithm::UniformDp,
            Baseline::WeiAvg => Algorithm::WeiAvg,
        }
    }
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::DpflBcs,
        Algorithm::FedSgd,
        Algorithm::UniformDp,
        Algorithm::WeiAvg,
    ];

    pub fn is_private(self) -> bool {
        self != Algorithm::FedSgd
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::DpflBcs => "dpfl-bcs",
            Algorithm::FedSgd => "fedsgd",
            Algorithm::UniformDp => "uniform-dp",
            Algorithm::WeiAvg => "weiavg",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dpfl-bcs" | "bcs" => Ok(Algorithm::DpflBcs),
            "fedsgd" => Ok(Algorithm::FedSgd),
            "uniform-dp" | "dpsgd" | "dmldp" => Ok(Algorithm::UniformDp),
            "weiavg" => Ok(Algorithm::WeiAvg),
            other => Err(Error::Parameter(format!("unknown algorithm `{other}`"))),
        }
    }
}

/// Everything the training loop needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub mechanism: MechanismKind,
    pub clients_per_round: usize,
    pub rounds: usize,
    pub stage_one_rounds: usize,
    pub clip_bound: f64,
    pub loss_cap: f64,
    pub c2: f64,
    pub schedule: LearningRateSchedule,
    /// Server-side heavy-ball momentum on the aggregated update.
    pub momentum: f64,
    /// Server-side decay, scaled by the round's learning rate.
    pub weight_decay: f64,
    /// Divide the aggregate by the number of responders instead of `K`.
    pub divide_by_responders: bool,
    /// Release exact values; budgets are still accounted.
    pub zero_noise: bool,
    /// Use uniform plans in both stages of the biased scheme.
    pub force_uniform_plan: bool,
    pub fit: FitSettings,
    pub winsorize_quantile: f64,
    pub budget_log_interval: usize,
}

impl TrainingConfig {
    pub fn validate(&self, algorithm: Algorithm, num_clients: usize) -> Result<()> {
        let k = self.clients_per_round;
        if num_clients == 0 {
            return param_err("at least one client is required");
        }
        if k == 0 || k > num_clients {
            return param_err(format!(
                "clients_per_round ({k}) must lie in 1..=num_clients ({num_clients})"
            ));
        }
        if self.stage_one_rounds == 0 || self.stage_one_rounds >= self.rounds {
            return param_err(format!(
                "stage_one_rounds ({}) must satisfy 1 <= stage_one_rounds < rounds ({})",
                self.stage_one_rounds, self.rounds
            ));
        }
        if algorithm == Algorithm::DpflBcs && self.stage_one_rounds < 2 {
            return param_err("stage_one_rounds must be >= 2 for dpfl-bcs");
        }
        let positive = [("clip_bound", self.clip_bound), ("c2", self.c2)];
        for (name, v) in positive {
            if v <= 0.0 || !v.is_finite() {
                return param_err(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        if self.loss_cap < 0.0 || !self.loss_cap.is_finite() {
            return param_err(format!(
                "loss_cap must be finite and >= 0, got {}",
                self.loss_cap
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return param_err(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return param_err(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        if !(self.winsorize_quantile > 0.0 && self.winsorize_quantile <= 1.0) {
            return param_err(format!(
                "winsorize_quantile must lie in (0, 1], got {}",
                self.winsorize_quantile
            ));
        }
        if self.budget_log_interval == 0 {
            return param_err("budget_log_interval must be >= 1");
        }
        self.schedule.validate()
    }
}

/// Clients, the server's test set, and the shared starting model.
#[derive(Debug, Clone, PartialEq)]
pub struct Federation {
    pub clients: Vec<ClientState>,
    pub test: Dataset,
    pub initial_model: ModelState,
}

impl Federation {
    fn validate(&self, private: bool, mechanism: MechanismKind) -> Result<()> {
        if self.test.is_empty() {
            return param_err("test set is empty");
        }
        for (i, c) in self.clients.iter().enumerate() {
            if c.id != i {
                return param_err(format!("client at position {i} has id {}", c.id));
            }
            if c.data.is_empty() {
                return param_err(format!("client {i} has no data"));
            }
            if c.data.feature_dim() != self.initial_model.feature_dim {
                return param_err(format!(
                    "client {i} feature dimension differs from the model"
                ));
            }
            if private && mechanism == MechanismKind::Gaussian {
                let d = c.budget.delta;
                if !(d > 0.0 && d < 1.0) {
                    return param_err(format!(
                        "client {i}: gaussian mechanism needs delta in (0, 1), got {d}"
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn client_meta(&self) -> Vec<ClientMeta> {
        self.clients
            .iter()
            .map(|c| ClientMeta {
                client_id: c.id,
                epsilon: c.budget.epsilon,
                delta: c.budget.delta,
                num_samples: c.data.len(),
            })
            .collect()
    }
}

/// Biased client selection with the two-stage protocol.
pub fn run_dpfl_bcs(
    cfg: &TrainingConfig,
    federation: &Federation,
    seed: u64,
) -> Result<RunHistory> {
    run(Algorithm::DpflBcs, cfg, federation, seed)
}

pub fn run_baseline(
    kind: Baseline,
    cfg: &TrainingConfig,
    federation: &Federation,
    seed: u64,
) -> Result<RunHistory> {
    run(kind.into(), cfg, federation, seed)
}

pub fn run(
    algorithm: Algorithm,
    cfg: &TrainingConfig,
    federation: &Federation,
    seed: u64,
) -> Result<RunHistory> {
    run_observed(algorithm, cfg, federation, seed, &mut |_| Ok(()))
}

/// Equal-share plan over the clients with a non-zero cap.
fn uniform_plan(caps: &[u64], k: u64, horizon: u64, z: u32) -> Result<SelectionPlan> {
    approximate_plan_capped(&vec![1.0; caps.len()], k, horizon, z, caps)
}

struct Stage {
    index: u8,
    plan: SelectionPlan,
    /// Participations within this stage.
    counts: Vec<u64>,
    /// Budget each client spreads over its planned releases in this stage.
    epsilon: Vec<f64>,
    delta: Vec<f64>,
}

/// Training loop shared by every algorithm. `observer` sees each history
/// line as soon as it exists, so a failing run still leaves a partial trail.
pub fn run_observed(
    algorithm: Algorithm,
    cfg: &TrainingConfig,
    federation: &Federation,
    seed: u64,
    observer: &mut dyn FnMut(&HistoryLine) -> Result<()>,
) -> Result<RunHistory> {
    let n = federation.clients.len();
    cfg.validate(algorithm, n)?;
    let private = algorithm.is_private();
    federation.validate(private, cfg.mechanism)?;

    let k = cfg.clients_per_round;
    let t_total = cfg.rounds;
    let t0 = cfg.stage_one_rounds;
    let horizon2 = (t_total - t0) as u64;
    let z = cfg.mechanism.exponent();
    let clip = ClipConfig::for_mechanism(cfg.mechanism, cfg.clip_bound);
    let mut model = federation.initial_model.clone();
    let mut clients = federation.clients.clone();
    let model_dim = model.dimension();

    let biased = algorithm == Algorithm::DpflBcs;
    let (lambda, phi1) = compute_phi_lambda(
        cfg.mechanism,
        model_dim,
        cfg.clip_bound,
        cfg.c2,
        &federation.client_meta(),
    )
    .map(|(l, p)| (Some(l), Some(p)))
    .or_else(|e| if biased { Err(e) } else { Ok((None, None)) })?;

    let estimation = match (biased, lambda, &phi1) {
        (true, Some(lambda), Some(phi)) => Some(EstimationContext {
            stage_one_rounds: t0,
            lambda,
            phi_n: phi.clone(),
            k: k as u64,
            z,
            horizon: horizon2,
            winsorize_quantile: cfg.winsorize_quantile,
            fit: cfg.fit,
        }),
        _ => None,
    };
    let header = RunHeader {
        algorithm,
        mechanism: cfg.mechanism,
        seed,
        num_clients: n,
        clients_per_round: k,
        rounds: t_total,
        stage_one_rounds: t0,
        model_dim,
        client_epsilon: clients.iter().map(|c| c.budget.epsilon).collect(),
        client_delta: clients.iter().map(|c| c.budget.delta).collect(),
        client_samples: clients.iter().map(|c| c.data.len()).collect(),
        estimation: estimation.clone(),
    };
    observer(&HistoryLine::Header(header.clone()))?;

    let full_caps = vec![t_total as u64; n];
    let plan1 = match (&phi1, biased && !cfg.force_uniform_plan) {
        (Some(phi), true) => approximate_plan_capped(phi, k as u64, t_total as u64, z, &full_caps)?,
        _ => uniform_plan(&full_caps, k as u64, t_total as u64, z)?,
    };
    let mut stage = Stage {
        index: 1,
        plan: plan1.clone(),
        counts: vec![0; n],
        epsilon: clients.iter().map(|c| c.budget.epsilon).collect(),
        delta: clients.iter().map(|c| c.budget.delta).collect(),
    };

    let mut participations = vec![0u64; n];
    let mut exhausted_at: Vec<Option<usize>> = vec![None; n];
    let mut velocity = vec![0.0; model_dim];
    let mut stage_one = StageOneLog::new(n);
    let mut rounds = Vec::with_capacity(t_total);
    let mut plan2 = None;
    let mut estimated: Option<(EstimatedParams, FitTrace)> = None;
    let mut replan_rounds = Vec::new();
    let mut ended_early = false;

    for t in 1..=t_total {
        let candidates: Vec<usize> = (0..n)
            .filter(|&i| {
                stage.counts[i] < stage.plan.counts[i]
                    && (!private || !clients[i].budget.is_exhausted())
            })
            .collect();
        if candidates.is_empty() {
            log::warn!("no eligible clients left at round {t}; ending the run");
            ended_early = true;
            break;
        }
        let mut sel_rng = rng::selection(seed, t);
        let selected = sample_selection(&stage.plan.probabilities, &candidates, k, &mut sel_rng);
        let lr = cfg.schedule.rate(t);
        let report_losses = biased && t <= t0;

        let stage_configs: Vec<StageConfig> = selected
            .iter()
            .map(|&i| StageConfig {
                mechanism: cfg.mechanism,
                clip,
                loss_cap: cfg.loss_cap,
                c2: cfg.c2,
                report_losses,
                planned_rounds: stage.plan.counts[i],
                stage_epsilon: stage.epsilon[i],
                stage_delta: stage.delta[i],
                zero_noise: cfg.zero_noise,
                non_private: !private,
            })
            .collect();
        let mut chosen: Vec<&mut ClientState> = clients
            .iter_mut()
            .filter(|c| selected.binary_search(&c.id).is_ok())
            .collect();
        let outcomes: Vec<Result<ClientOutcome>> = chosen
            .par_iter_mut()
            .zip(stage_configs.par_iter())
            .map(|(c, sc)| {
                let mut r = rng::client_round(seed, c.id, t);
                client_round(c, &model, lr, sc, &mut r)
            })
            .collect();

        let mut gradients = Vec::with_capacity(selected.len());
        let mut responders = Vec::with_capacity(selected.len());
        let mut updates = Vec::with_capacity(selected.len());
        let mut reports = Vec::new();
        for (&i, outcome) in selected.iter().zip(outcomes) {
            match outcome? {
                ClientOutcome::Refused => log::warn!("client {i} refused at round {t}"),
                ClientOutcome::Update(u) => {
                    participations[i] += 1;
                    stage.counts[i] += 1;
                    if u.consumption.exhausted && exhausted_at[i].is_none() {
                        exhausted_at[i] = Some(t);
                    }
                    if let Some(l) = &u.losses {
                        reports.push(LossReport {
                            client: i,
                            before: l.before,
                            after: l.after,
                        });
                    }
                    updates.push(UpdateMeta {
                        client: i,
                        noisy_norm: norm(&u.noisy_gradient, clip.norm_kind),
                        noise_scale: u.noise.scale,
                        sensitivity: u.noise.sensitivity,
                        epsilon_spent: u.consumption.epsilon,
                    });
                    gradients.push(u.noisy_gradient);
                    responders.push(i);
                }
            }
        }

        let weights: Vec<f64> = match algorithm {
            Algorithm::WeiAvg => {
                let total: f64 = responders.iter().map(|&i| clients[i].budget.epsilon).sum();
                responders
                    .iter()
                    .map(|&i| clients[i].budget.epsilon / total)
                    .collect()
            }
            _ if cfg.divide_by_responders => vec![1.0 / responders.len() as f64; responders.len()],
            _ => vec![1.0 / k as f64; responders.len()],
        };
        match aggregate_weighted(&gradients, &weights)? {
            None => log::warn!("round {t}: no updates received, model unchanged"),
            Some(update) => apply_update(&mut model, &mut velocity, &update, lr, cfg),
        }
        if model.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Evaluation(format!(
                "model weights diverged at round {t}"
            )));
        }

        if report_losses {
            stage_one.rounds.push(StageOneRound {
                t,
                selected: selected.clone(),
                reports: reports.clone(),
            });
        }

        let metrics = model.evaluate(&federation.test)?;
        let train_loss = training_loss(&model, &clients)?;
        let budget_remaining = (t % cfg.budget_log_interval == 0 || t == t_total).then(|| {
            clients
                .iter()
                .map(|c| (c.id.to_string(), c.budget.epsilon_remaining))
                .collect::<BTreeMap<_, _>>()
        });
        log::info!(
            "{algorithm} t={t} stage={} selected={} test_loss={:.6}",
            stage.index,
            selected.len(),
            metrics.loss
        );
        let record = RoundRecord {
            t,
            stage: stage.index,
            selected,
            test_loss: metrics.loss,
            test_accuracy: metrics.accuracy,
            train_loss,
            learning_rate: lr,
            updates,
            loss_reports: reports,
            counters: participations.clone(),
            budget_remaining,
        };
        observer(&HistoryLine::Round(record.clone()))?;
        rounds.push(record);

        if t == t0 {
            // caps: clients with spent epsilon get nothing in stage two
            let eligible: Vec<bool> = clients
                .iter()
                .map(|c| {
                    !private
                        || (!c.budget.is_exhausted()
                            && (cfg.mechanism == MechanismKind::Laplace
                                || c.budget.delta_remaining > 0.0))
                })
                .collect();
            let caps: Vec<u64> = eligible
                .iter()
                .map(|&e| if e { horizon2 } else { 0 })
                .collect();
            let next = if let Some(ctx) = &estimation {
                let (params, trace) = estimate_from_log(&stage_one, ctx)?;
                log::info!(
                    "estimated L={:.4e} mu={:.4e} gamma={:.4e} sigma2={:.4e} rho={:.4} residual={:.3e}",
                    params.l_smooth,
                    params.mu_convex,
                    params.gamma,
                    params.sigma_sq,
                    params.rho_min_hat,
                    trace.final_residual()
                );
                let plan = if cfg.force_uniform_plan {
                    uniform_plan(&caps, k as u64, horizon2, z)?
                } else {
                    let phi2: Vec<f64> = clients
                        .iter()
                        .zip(&eligible)
                        .map(|(c, &e)| {
                            if e {
                                phi_for(
                                    cfg.mechanism,
                                    c.budget.epsilon_remaining,
                                    c.budget.delta_remaining,
                                    c.data.len(),
                                )
                            } else {
                                Ok(1.0)
                            }
                        })
                        .collect::<Result<_>>()?;
                    optimal_plan_capped(
                        &phi2,
                        &params.gamma_hat_n,
                        params.omega_a,
                        params.omega_b,
                        k as u64,
                        horizon2,
                        z,
                        &caps,
                    )?
                };
                estimated = Some((params, trace));
                plan
            } else {
                uniform_plan(&caps, k as u64, horizon2, z)?
            };
            stage = Stage {
                index: 2,
                plan: next.clone(),
                counts: vec![0; n],
                epsilon: clients.iter().map(|c| c.budget.epsilon_remaining).collect(),
                delta: clients.iter().map(|c| c.budget.delta_remaining).collect(),
            };
            plan2 = Some(next);
            replan_rounds.push(t);
        }
    }

    let final_metrics = model.evaluate(&federation.test)?;
    let ledger = clients
        .iter()
        .zip(&federation.clients)
        .map(|(c, c0)| ClientLedger {
            client: c.id,
            epsilon: c0.budget.epsilon,
            delta: c0.budget.delta,
            epsilon_consumed: c0.budget.epsilon_remaining - c.budget.epsilon_remaining,
            delta_consumed: c0.budget.delta_remaining - c.budget.delta_remaining,
            participations: participations[c.id],
            exhausted_at: exhausted_at[c.id],
        })
        .collect();
    let (estimated_params, fit_residuals) = match estimated {
        Some((p, tr)) => (Some(p), Some(tr.residuals)),
        None => (None, None),
    };
    let summary = RunSummary {
        final_test_loss: final_metrics.loss,
        final_test_accuracy: final_metrics.accuracy,
        rounds_completed: rounds.len(),
        ended_early,
        replan_rounds,
        plan_stage1: plan1,
        plan_stage2: plan2,
        estimated_params,
        fit_residuals,
        ledger,
        final_weights: model.weights.clone(),
    };
    observer(&HistoryLine::Summary(summary.clone()))?;
    Ok(RunHistory {
        header,
        rounds,
        summary,
    })
}

fn apply_update(
    model: &mut ModelState,
    velocity: &mut [f64],
    update: &[f64],
    lr: f64,
    cfg: &TrainingConfig,
) {
    if cfg.momentum == 0.0 && cfg.weight_decay == 0.0 {
        for (w, u) in model.weights.iter_mut().zip(update) {
            *w -= u;
        }
        return;
    }
    for ((w, v), u) in model
        .weights
        .iter_mut()
        .zip(velocity.iter_mut())
        .zip(update)
    {
        *v = cfg.momentum * *v + u + lr * cfg.weight_decay * *w;
        *w -= *v;
    }
}

/// Sample-weighted mean training loss over every client, uncapped.
fn training_loss(model: &ModelState, clients: &[ClientState]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for c in clients {
        total += model.evaluate(&c.data)?.loss * c.data.len() as f64;
        count += c.data.len();
    }
    Ok(total / count as f64)
}
