mod common;

use common::{bound_oracle, enumerate_min, objective, omegas, random_log};
use dpfl_core::dp::MechanismKind;
use dpfl_core::selection::{
    approximate_counts, approximate_plan, compute_phi_lambda, estimate_problem_params,
    objective_value, optimal_plan, predicted_loss_bound, solve_relaxation, ClientMeta,
    EstimatedParams, FitSettings,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn params(phi: Vec<f64>, gamma_n: Vec<f64>, l: f64, mu: f64, gamma: f64) -> EstimatedParams {
    EstimatedParams {
        gamma_hat_n: gamma_n,
        rho_min_hat: 1.0,
        lambda: 2.0,
        phi_n: phi,
        gamma,
        l_smooth: l,
        mu_convex: mu,
        sigma_sq: 0.1,
        init_dist_sq: 1.0,
        omega_a: 0.0,
        omega_b: 0.0,
    }
}

#[test]
fn phi_lambda_example() {
    let (lambda, phi) = compute_phi_lambda(
        MechanismKind::Gaussian,
        2,
        1.0,
        1.0,
        &[ClientMeta {
            client_id: 0,
            epsilon: 1.0,
            delta: (-1.0f64).exp(),
            num_samples: 10,
        }],
    )
    .unwrap();
    assert!((lambda - 8.0).abs() < 1e-12);
    assert!((phi[0] - 0.01).abs() < 1e-12);
}

#[test]
fn approximate_plan_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..40 {
        let n = rng.random_range(2..=5);
        let k = rng.random_range(1..=n as u64);
        let h = rng.random_range(1..=(24 / k));
        let z = if case % 2 == 0 { 1 } else { 2 };
        let phi: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..5.0)).collect();
        let plan = approximate_plan(&phi, k, h, z).unwrap();
        assert_eq!(plan.total(), k * h);
        let zeros = vec![0.0; n];
        let cost = |c: &[u64]| {
            let f: Vec<f64> = c.iter().map(|&v| v as f64).collect();
            objective(&f, &phi, &zeros, 1.0, 0.0, z)
        };
        let (_, best) = enumerate_min(n, k * h, cost);
        assert!(cost(&plan.counts) <= best * (1.0 + 1e-12), "case {case}");
    }
}

#[test]
fn closed_form_is_stationary() {
    // equal marginal cost T^z Phi across clients, total KT
    let phi = [0.3, 1.2, 4.0];
    for z in [1, 2] {
        let c = approximate_counts(&phi, 3, 10, z).unwrap();
        assert!((c.iter().sum::<f64>() - 30.0).abs() < 1e-9);
        let m: Vec<f64> = c
            .iter()
            .zip(&phi)
            .map(|(t, p)| t.powi(z as i32) * p)
            .collect();
        assert!(m.iter().all(|v| (v - m[0]).abs() < 1e-9 * m[0]));
    }
}

#[test]
fn optimal_plan_matches_enumeration_and_kkt() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..30 {
        let n = rng.random_range(2..=6);
        let k = rng.random_range(1..=n.min(3) as u64);
        let h = rng.random_range(1..=(30 / k).min(if n == 6 { 20 } else { 30 }));
        let z = 1 + case % 2;
        let phi: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..3.0)).collect();
        let gamma_n: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let mut p = params(
            phi.clone(),
            gamma_n.clone(),
            rng.random_range(1.0..4.0),
            rng.random_range(0.1..0.9),
            8.0,
        );
        let plan = optimal_plan(&p, h, k, z as u32).unwrap();
        p.set_horizon(h, k).unwrap();
        let (oa, ob) = omegas(
            p.lambda,
            p.gamma,
            p.l_smooth,
            p.mu_convex,
            h as f64,
            k as f64,
        );
        assert!((p.omega_a - oa).abs() <= 1e-12 * oa && (p.omega_b - ob).abs() <= 1e-12 * ob);
        let cost = |c: &[u64]| {
            let f: Vec<f64> = c.iter().map(|&v| v as f64).collect();
            objective(&f, &phi, &gamma_n, oa, ob, z as u32)
        };
        let (_, best) = enumerate_min(n, k * h, cost);
        assert!(cost(&plan.counts) <= 1.02 * best + 1e-15, "case {case}");

        let relax =
            solve_relaxation(&phi, &gamma_n, oa, ob, z as u32, (k * h) as f64, None).unwrap();
        let lam = relax.multiplier;
        for i in 0..n {
            let t = relax.counts[i];
            let marginal = (z as f64 + 1.0) * oa * phi[i] * t.powi(z) + ob * gamma_n[i];
            if t > 0.0 {
                assert!(
                    (marginal - lam).abs() <= 1e-6 * lam.abs(),
                    "case {case} client {i}"
                );
            } else {
                assert!(ob * gamma_n[i] >= lam - 1e-6 * lam.abs());
            }
        }
    }
}

#[test]
fn heterogeneous_budget_clients_get_ordered_counts() {
    // identical data, eps 0.1 vs 10
    let metas = [
        ClientMeta {
            client_id: 0,
            epsilon: 0.1,
            delta: 1e-5,
            num_samples: 50,
        },
        ClientMeta {
            client_id: 1,
            epsilon: 10.0,
            delta: 1e-5,
            num_samples: 50,
        },
    ];
    let (lambda, phi) = compute_phi_lambda(MechanismKind::Gaussian, 5, 1.0, 1.0, &metas).unwrap();
    let mut p = params(phi.clone(), vec![0.2, 0.2], 2.0, 0.5, 8.0);
    p.lambda = lambda;
    let plan = optimal_plan(&p, 10, 1, 1).unwrap();
    p.set_horizon(10, 1).unwrap();
    let (best, _) = enumerate_min(2, 10, |c| {
        objective(
            &[c[0] as f64, c[1] as f64],
            &phi,
            &[0.2, 0.2],
            p.omega_a,
            p.omega_b,
            1,
        )
    });
    assert_eq!(plan.counts, best);
    assert!(plan.counts[1] > plan.counts[0]);
}

#[test]
fn library_bound_matches_written_out_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let n = rng.random_range(2..8);
        let mut p = params(
            (0..n).map(|_| rng.random_range(1e-4..1.0)).collect(),
            (0..n).map(|_| rng.random_range(0.0..1.0)).collect(),
            rng.random_range(1.0..5.0),
            rng.random_range(0.05..0.9),
            rng.random_range(0.5..20.0),
        );
        p.rho_min_hat = rng.random_range(0.5..2.0);
        let counts: Vec<u64> = (0..n).map(|_| rng.random_range(0..6)).collect();
        for z in [1, 2] {
            let lib = predicted_loss_bound(&p, &counts, 7, 3, z).unwrap();
            let oracle = bound_oracle(&p, &counts, 7.0, 3.0, z);
            assert!((lib - oracle).abs() <= 1e-10 * oracle.abs().max(1.0));
        }
    }
}

#[test]
fn bound_fit_inverts_forward_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..10 {
        let n = rng.random_range(3..10);
        let k = rng.random_range(1..=3.min(n));
        let t0 = rng.random_range(3..12);
        let log = random_log(n, k, t0, &mut rng);
        let mut truth = params(
            (0..n).map(|_| rng.random_range(1e-4..1e-2)).collect(),
            (0..n).map(|_| rng.random_range(0.0..0.5)).collect(),
            rng.random_range(1.0..5.0),
            rng.random_range(0.1..0.9),
            rng.random_range(1.0..20.0),
        );
        truth.rho_min_hat = rng.random_range(0.8..1.2);
        truth.sigma_sq = rng.random_range(0.0..2.0);
        truth.init_dist_sq = rng.random_range(0.5..10.0);
        let counts = log.counters(t0 - 1);
        let observed = bound_oracle(&truth, &counts, (t0 - 1) as f64, k as f64, 1);
        let (fit, trace) = estimate_problem_params(
            observed,
            &log,
            t0,
            truth.lambda,
            &truth.phi_n,
            &truth.gamma_hat_n,
            truth.rho_min_hat,
            k as u64,
            1,
            20,
            &FitSettings::default(),
        )
        .unwrap();
        assert!(
            trace.final_residual() <= 1e-6,
            "case {case}: {}",
            trace.final_residual()
        );
        assert!(trace.residuals.windows(2).all(|w| w[1] <= w[0]));
        assert!(fit.l_smooth > fit.mu_convex && fit.mu_convex > 0.0);
    }
}

proptest! {
    #[test]
    fn objective_is_convex(
        seed in any::<u64>(),
        theta in 0.0f64..1.0,
        z in 1u32..=2,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..8);
        let phi: Vec<f64> = (0..n).map(|_| rng.random_range(1e-3..5.0)).collect();
        let gamma: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..30.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..30.0)).collect();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| theta * x + (1.0 - theta) * y).collect();
        let j = |c: &[f64]| objective_value(c, &phi, &gamma, 0.7, 0.3, z);
        let rhs = theta * j(&a) + (1.0 - theta) * j(&b);
        prop_assert!(rhs - j(&mix) >= -1e-9 * rhs.abs().max(1.0));
    }

    #[test]
    fn larger_phi_never_raises_its_count(
        seed in any::<u64>(),
        factor in 1.0f64..10.0,
        z in 1u32..=2,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..7);
        let mut phi: Vec<f64> = (0..n).map(|_| rng.random_range(1e-2..5.0)).collect();
        let gamma: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
        let total = rng.random_range(1.0..60.0);
        let before = solve_relaxation(&phi, &gamma, 0.5, 0.2, z, total, None).unwrap();
        let i = rng.random_range(0..n);
        phi[i] *= factor;
        let after = solve_relaxation(&phi, &gamma, 0.5, 0.2, z, total, None).unwrap();
        prop_assert!(after.counts[i] <= before.counts[i] * (1.0 + 1e-9) + 1e-9);
    }

    #[test]
    fn symmetric_instances_give_uniform_plans(n in 1usize..8, k in 1u64..4, h in 1u64..20, z in 1u32..=2) {
        let p = params(vec![0.7; n], vec![0.4; n], 2.0, 0.5, 8.0);
        let plan = optimal_plan(&p, h, k, z).unwrap();
        let lo = *plan.counts.iter().min().unwrap();
        let hi = *plan.counts.iter().max().unwrap();
        prop_assert!(hi - lo <= 1);
        prop_assert_eq!(plan.total(), k * h);
    }
}
