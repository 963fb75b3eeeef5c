//! Stage-one estimators and the bound-fitting problem.

use log::warn;
use serde::{Deserialize, Serialize};

use super::EstimatedParams;
use crate::error::{param_err, Error, Result};

/// Noisy loss values one client reported in one stage-one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub client: usize,
    /// Loss of the global model the round started from.
    pub before: f64,
    /// Loss of the client's locally updated model.
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOneRound {
    pub t: usize,
    pub selected: Vec<usize>,
    pub reports: Vec<LossReport>,
}

/// Everything the server observed during stage one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOneLog {
    pub num_clients: usize,
    pub rounds: Vec<StageOneRound>,
}

impl StageOneLog {
    pub fn new(num_clients: usize) -> Self {
        Self {
            num_clients,
            rounds: Vec::new(),
        }
    }

    /// Selection counts over rounds `1..=through`.
    pub fn counters(&self, through: usize) -> Vec<u64> {
        let mut c = vec![0u64; self.num_clients];
        for round in self.rounds.iter().filter(|r| r.t <= through) {
            for &n in &round.selected {
                c[n] += 1;
            }
        }
        c
    }

    pub fn round(&self, t: usize) -> Option<&StageOneRound> {
        self.rounds.iter().find(|r| r.t == t)
    }
}

/// Per-client non-IID estimate: the smallest absolute gap between the two
/// reported losses. Clients never observed get the mean of the observed ones.
pub fn estimate_gamma_n(log: &StageOneLog) -> Result<Vec<f64>> {
    let mut best: Vec<Option<f64>> = vec![None; log.num_clients];
    for report in log.rounds.iter().flat_map(|r| &r.reports) {
        if report.client >= log.num_clients {
            return param_err(format!("report for unknown client {}", report.client));
        }
        let gap = (report.before - report.after).abs();
        let slot = &mut best[report.client];
        *slot = Some(slot.map_or(gap, |g: f64| g.min(gap)));
    }
    let observed: Vec<f64> = best.iter().flatten().copied().collect();
    if observed.is_empty() {
        return Err(Error::State(
            "stage-one log has no loss reports to estimate from".into(),
        ));
    }
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    Ok(best.into_iter().map(|g| g.unwrap_or(mean)).collect())
}

/// Cap every value at the empirical `quantile` (nearest rank).
pub fn winsorize(values: &[f64], quantile: f64) -> Vec<f64> {
    if values.is_empty() || quantile >= 1.0 {
        return values.to_vec();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((quantile * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let cap = sorted[rank - 1];
    values.iter().map(|&v| v.min(cap)).collect()
}

/// Skew estimate from counts `C_n` over `elapsed` rounds and local losses at
/// the latest model. Clients without a fresh loss use `average`.
///
/// A non-positive average yields the neutral value 1.
pub fn rho_from_counts(
    counts: &[u64],
    local_losses: &[Option<f64>],
    average: f64,
    k: u64,
    elapsed: u64,
) -> Result<f64> {
    if counts.len() != local_losses.len() {
        return param_err("counts and losses lengths differ");
    }
    if k == 0 || elapsed == 0 {
        return param_err("K and elapsed rounds must be >= 1");
    }
    if average <= 0.0 || !average.is_finite() {
        warn!("average reported loss is {average}; using neutral selection skew 1.0");
        return Ok(1.0);
    }
    let numerator: f64 = counts
        .iter()
        .zip(local_losses)
        .map(|(&c, f)| c as f64 * f.unwrap_or(average))
        .sum();
    Ok(numerator / (k as f64 * elapsed as f64 * average))
}

/// Skew estimate from the stage-one log: counts over the first `t0 - 1`
/// rounds, losses reported in round `t0` at the model it started from.
pub fn estimate_rho_min(log: &StageOneLog, k: u64, t0: usize) -> Result<f64> {
    if t0 < 2 {
        return param_err("estimating the selection skew needs T0 >= 2");
    }
    let last = log
        .round(t0)
        .ok_or_else(|| Error::State(format!("stage-one log is missing round {t0}")))?;
    if last.reports.is_empty() {
        return Err(Error::State(format!("round {t0} carries no loss reports")));
    }
    let average = last.reports.iter().map(|r| r.before).sum::<f64>() / last.reports.len() as f64;
    let mut local = vec![None; log.num_clients];
    for r in &last.reports {
        local[r.client] = Some(r.before);
    }
    let counts = log.counters(t0 - 1);
    rho_from_counts(&counts, &local, average, k, (t0 - 1) as u64)
}

/// The five terms of the loss bound after `elapsed` rounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTerms {
    pub initial_distance: f64,
    pub selection_bias: f64,
    pub gradient_variance: f64,
    pub noise: f64,
    pub heterogeneity: f64,
}

impl BoundTerms {
    pub fn total(&self) -> f64 {
        self.initial_distance
            + self.selection_bias
            + self.gradient_variance
            + self.noise
            + self.heterogeneity
    }

    pub fn evaluate(
        params: &EstimatedParams,
        counts: &[u64],
        elapsed: u64,
        k: u64,
        z: u32,
    ) -> Result<Self> {
        let n = params.num_clients();
        if counts.len() != n || params.gamma_hat_n.len() != n {
            return param_err("bound evaluation: client vectors differ in length");
        }
        if elapsed == 0 || k == 0 {
            return param_err("elapsed rounds and K must be >= 1");
        }
        let mu = params.mu_convex;
        if mu == 0.0 {
            return Err(Error::Evaluation("strong convexity mu is zero".into()));
        }
        let tau = elapsed as f64;
        let gt = params.gamma + tau;
        if gt == 0.0 {
            return Err(Error::Evaluation("gamma + elapsed rounds is zero".into()));
        }
        let l = params.l_smooth;
        let kf = k as f64;
        let nf = n as f64;
        let sum_gamma: f64 = params.gamma_hat_n.iter().sum();
        let noise_sum: f64 = counts
            .iter()
            .zip(&params.phi_n)
            .map(|(&c, &phi)| (c as f64).powi(z as i32 + 1) * phi)
            .sum();
        let het_sum: f64 = counts
            .iter()
            .zip(&params.gamma_hat_n)
            .map(|(&c, &g)| c as f64 * g)
            .sum();
        Ok(Self {
            initial_distance: params.init_dist_sq / gt * l * params.gamma / 2.0,
            selection_bias: -3.0 * l * params.rho_min_hat / (2.0 * mu * nf) * sum_gamma,
            gradient_variance: 4.0 * l * params.sigma_sq / (gt * mu * mu * kf),
            noise: noise_sum / (gt * tau) * 4.0 * l * params.lambda / (kf * kf * mu * mu),
            heterogeneity: het_sum / tau
                * (4.0 * l * l / (gt * kf * mu * mu) + 3.0 * l / (2.0 * kf * mu)),
        })
    }
}

/// Predicted global loss after `elapsed` rounds in which client `n` was
/// selected `counts[n]` times.
pub fn predicted_loss_bound(
    params: &EstimatedParams,
    counts: &[u64],
    elapsed: u64,
    k: u64,
    z: u32,
) -> Result<f64> {
    Ok(BoundTerms::evaluate(params, counts, elapsed, k, z)?.total())
}

/// Settings of the coordinate-descent fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    /// Upper end of every search interval.
    pub upper_bound: f64,
    pub max_sweeps: usize,
    /// Stop once the residual falls below this.
    pub tolerance: f64,
    /// Interval width at which golden-section search stops.
    pub line_tolerance: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            upper_bound: 1e6,
            max_sweeps: 200,
            tolerance: 1e-10,
            line_tolerance: 1e-8,
        }
    }
}

/// Residual after initialization (index 0) and after every sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub residuals: Vec<f64>,
}

impl FitTrace {
    pub fn sweeps(&self) -> usize {
        self.residuals.len() - 1
    }

    pub fn final_residual(&self) -> f64 {
        *self
            .residuals
            .last()
            .expect("trace has the initial residual")
    }
}

/// Minimize a function on `[lo, hi]` by golden-section search. Returns the
/// best point seen, including the endpoints.
pub fn golden_section_min<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    tolerance: f64,
) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut best = (a, f(a));
    let fb = f(b);
    if fb < best.1 {
        best = (b, fb);
    }
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..500 {
        if (b - a).abs() <= tolerance {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        for (x, fx) in [(c, fc), (d, fd)] {
            if fx < best.1 {
                best = (x, fx);
            }
        }
    }
    best
}

#[derive(Clone, Copy)]
enum Coord {
    InitDist,
    Gamma,
    SigmaSq,
    Smooth,
    Convex,
}

const COORDS: [Coord; 5] = [
    Coord::InitDist,
    Coord::Gamma,
    Coord::SigmaSq,
    Coord::Smooth,
    Coord::Convex,
];

/// L is kept at least this factor above mu.
const SMOOTH_MARGIN: f64 = 1.0 + 1e-6;
/// Smallest admissible mu; the bound diverges at zero.
const MIN_CONVEX: f64 = 1e-9;

fn set(p: &mut EstimatedParams, c: Coord, v: f64) {
    match c {
        Coord::InitDist => p.init_dist_sq = v,
        Coord::Gamma => p.gamma = v,
        Coord::SigmaSq => p.sigma_sq = v,
        Coord::Smooth => p.l_smooth = v,
        Coord::Convex => p.mu_convex = v,
    }
}

fn interval(p: &EstimatedParams, c: Coord, upper: f64) -> (f64, f64) {
    match c {
        Coord::Smooth => {
            let lo = p.mu_convex * SMOOTH_MARGIN;
            (lo, upper.max(lo))
        }
        Coord::Convex => (MIN_CONVEX, (p.l_smooth / SMOOTH_MARGIN).min(upper)),
        _ => (0.0, upper),
    }
}

/// Fit the unknown bound parameters to the observed global loss.
///
/// Cyclic coordinate descent over `(init_dist_sq, gamma, sigma_sq, L, mu)`
/// from the neutral point `(1, 1, 0, 1, 0.5)`; each coordinate step is a
/// golden-section search on `|observed - predicted|` and is only accepted
/// when it lowers the residual, so the residual never increases across
/// sweeps. `omega_a`/`omega_b` of the result are set for `horizon`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_problem_params(
    observed_loss: f64,
    log: &StageOneLog,
    t0: usize,
    lambda: f64,
    phi_n: &[f64],
    gamma_hat_n: &[f64],
    rho_min_hat: f64,
    k: u64,
    z: u32,
    horizon: u64,
    settings: &FitSettings,
) -> Result<(EstimatedParams, FitTrace)> {
    if t0 < 2 {
        return param_err("fitting the bound needs T0 >= 2");
    }
    if phi_n.len() != log.num_clients || gamma_hat_n.len() != log.num_clients {
        return param_err("client vectors differ in length from the log");
    }
    let elapsed = (t0 - 1) as u64;
    let counts = log.counters(t0 - 1);
    let upper = settings.upper_bound;
    let mut p = EstimatedParams {
        gamma_hat_n: gamma_hat_n.to_vec(),
        rho_min_hat,
        lambda,
        phi_n: phi_n.to_vec(),
        gamma: 1.0f64.min(upper),
        l_smooth: 1.0f64.min(upper),
        mu_convex: 0.5f64.min(upper / SMOOTH_MARGIN),
        sigma_sq: 0.0,
        init_dist_sq: 1.0f64.min(upper),
        omega_a: 0.0,
        omega_b: 0.0,
    };
    let residual_of = |p: &EstimatedParams| -> f64 {
        match predicted_loss_bound(p, &counts, elapsed, k, z) {
            Ok(v) if v.is_finite() => (observed_loss - v).abs(),
            _ => f64::INFINITY,
        }
    };
    let mut residual = residual_of(&p);
    let mut trace = FitTrace {
        residuals: vec![residual],
    };
    for _ in 0..settings.max_sweeps {
        if residual <= settings.tolerance {
            break;
        }
        for c in COORDS {
            let (lo, hi) = interval(&p, c, upper);
            if !(hi >= lo) {
                continue;
            }
            let mut probe = p.clone();
            let (x, fx) = golden_section_min(
                |v| {
                    set(&mut probe, c, v);
                    residual_of(&probe)
                },
                lo,
                hi,
                settings.line_tolerance,
            );
            if fx < residual {
                set(&mut p, c, x);
                residual = fx;
            }
            if residual <= settings.tolerance {
                break;
            }
        }
        trace.residuals.push(residual);
        if let Some(prev) = trace.residuals.iter().rev().nth(1) {
            if *prev == residual {
                // a full sweep without progress: a fixed point of the descent
                break;
            }
        }
    }
    debug_assert!(p.l_smooth > p.mu_convex && p.mu_convex >= 0.0);
    p.set_horizon(horizon, k)?;
    Ok((p, trace))
}

/// Inputs of the stage-one estimation pipeline besides the log itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationContext {
    pub stage_one_rounds: usize,
    pub lambda: f64,
    pub phi_n: Vec<f64>,
    pub k: u64,
    pub z: u32,
    /// Rounds left after stage one, used for the returned coefficients.
    pub horizon: u64,
    pub winsorize_quantile: f64,
    pub fit: FitSettings,
}

/// Mean of the losses reported at the start of round `t`, i.e. the server's
/// view of the global loss at the model round `t` started from.
pub fn observed_global_loss(log: &StageOneLog, t: usize) -> Result<f64> {
    let round = log
        .round(t)
        .ok_or_else(|| Error::State(format!("stage-one log is missing round {t}")))?;
    if round.reports.is_empty() {
        return Err(Error::State(format!("round {t} carries no loss reports")));
    }
    Ok(round.reports.iter().map(|r| r.before).sum::<f64>() / round.reports.len() as f64)
}

/// The whole stage-one estimation: per-client heterogeneity (winsorized),
/// selection skew, then the bound fit against the observed loss.
pub fn estimate_from_log(
    log: &StageOneLog,
    ctx: &EstimationContext,
) -> Result<(EstimatedParams, FitTrace)> {
    let t0 = ctx.stage_one_rounds;
    if t0 < 2 {
        return param_err("estimation needs at least two stage-one rounds");
    }
    for t in 1..=t0 {
        if log.round(t).is_none() {
            return Err(Error::State(format!("stage-one log is missing round {t}")));
        }
    }
    let gamma_hat = winsorize(&estimate_gamma_n(log)?, ctx.winsorize_quantile);
    let rho = estimate_rho_min(log, ctx.k, t0)?;
    let observed = observed_global_loss(log, t0)?;
    estimate_problem_params(
        observed,
        log,
        t0,
        ctx.lambda,
        &ctx.phi_n,
        &gamma_hat,
        rho,
        ctx.k,
        ctx.z,
        ctx.horizon,
        &ctx.fit,
    )
}
