//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use dpfl_core::config::ExperimentConfig;
use dpfl_core::selection::{EstimatedParams, LossReport, StageOneLog, StageOneRound};
use rand::Rng;

/// Allocation objective written out directly.
pub fn objective(counts: &[f64], phi: &[f64], gamma: &[f64], oa: f64, ob: f64, z: u32) -> f64 {
    counts
        .iter()
        .zip(phi.iter().zip(gamma))
        .map(|(&t, (&p, &g))| oa * t.powi(z as i32 + 1) * p + ob * t * g)
        .sum()
}

/// Visit every way of writing `total` as an ordered sum of `n` non-negative integers.
pub fn for_each_composition(n: usize, total: u64, f: &mut impl FnMut(&[u64])) {
    fn rec(i: usize, left: u64, cur: &mut Vec<u64>, f: &mut impl FnMut(&[u64])) {
        if i + 1 == cur.len() {
            cur[i] = left;
            f(cur);
            return;
        }
        for v in 0..=left {
            cur[i] = v;
            rec(i + 1, left - v, cur, f);
        }
    }
    let mut cur = vec![0; n];
    rec(0, total, &mut cur, f);
}

/// Minimum of `cost` over all integer compositions.
pub fn enumerate_min(n: usize, total: u64, cost: impl Fn(&[u64]) -> f64) -> (Vec<u64>, f64) {
    let mut best = (Vec::new(), f64::INFINITY);
    for_each_composition(n, total, &mut |c| {
        let v = cost(c);
        if v < best.1 {
            best = (c.to_vec(), v);
        }
    });
    best
}

/// Coefficients written out directly for a horizon `h`.
pub fn omegas(lambda: f64, gamma: f64, l: f64, mu: f64, h: f64, k: f64) -> (f64, f64) {
    let a = 4.0 * l * lambda / ((gamma + h) * h * k * k * mu * mu);
    let b = 4.0 * l * l / ((gamma + h) * h * k * mu * mu) + 3.0 * l / (2.0 * h * k * mu);
    (a, b)
}

/// The five-term loss bound after `tau` rounds, written out directly.
pub fn bound_oracle(p: &EstimatedParams, counts: &[u64], tau: f64, k: f64, z: u32) -> f64 {
    let (l, mu, g) = (p.l_smooth, p.mu_convex, p.gamma);
    let n = counts.len() as f64;
    let init = p.init_dist_sq * l * g / (2.0 * (g + tau));
    let bias = -3.0 * l * p.rho_min_hat / (2.0 * mu * n) * p.gamma_hat_n.iter().sum::<f64>();
    let var = 4.0 * l * p.sigma_sq / ((g + tau) * mu * mu * k);
    let noise: f64 = counts
        .iter()
        .zip(&p.phi_n)
        .map(|(&c, &phi)| (c as f64).powi(z as i32 + 1) * phi)
        .sum::<f64>()
        / ((g + tau) * tau)
        * 4.0
        * l
        * p.lambda
        / (k * k * mu * mu);
    let het: f64 = counts
        .iter()
        .zip(&p.gamma_hat_n)
        .map(|(&c, &gm)| c as f64 * gm)
        .sum::<f64>()
        / tau
        * (4.0 * l * l / ((g + tau) * k * mu * mu) + 3.0 * l / (2.0 * k * mu));
    init + bias + var + noise + het
}

/// A stage-one log with random selections of `k` distinct clients per round
/// and random loss reports.
pub fn random_log<R: Rng>(n: usize, k: usize, t0: usize, rng: &mut R) -> StageOneLog {
    let mut log = StageOneLog::new(n);
    for t in 1..=t0 {
        let mut pool: Vec<usize> = (0..n).collect();
        let mut selected = Vec::new();
        for _ in 0..k {
            selected.push(pool.remove(rng.random_range(0..pool.len())));
        }
        selected.sort_unstable();
        let reports = selected
            .iter()
            .map(|&c| LossReport {
                client: c,
                before: rng.random_range(0.5..2.0),
                after: rng.random_range(0.3..1.5),
            })
            .collect();
        log.rounds.push(StageOneRound {
            t,
            selected,
            reports,
        });
    }
    log
}

/// The desk-scale regression scenario used by the utility checks.
pub fn utility_config(epsilon_max: f64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    for s in [
        "num_clients=20",
        "clients_per_round=5",
        "rounds=60",
        "stage_one_rounds=5",
        "mechanism=gaussian",
        "epsilon_min=0.5",
        "dirichlet_alpha=3",
        "dataset=synthetic-regression",
        "num_samples=1000",
        "feature_dim=10",
        "noise_std=0.5",
        "clip_bound=5",
        "lr_initial=0.1",
    ] {
        cfg.apply_override(s).unwrap();
    }
    cfg.epsilon_max = epsilon_max;
    cfg
}
