use super::{omega_coefficients, EstimatedParams, SelectionPlan};
use crate::error::{param_err, Result};

/// Round non-negative reals to integers summing to `total`.
///
/// Each value is floored and the leftover units go to the largest fractional
/// parts, lower index first on ties. Every output differs from its input by
/// less than one when the inputs already sum to `total`.
pub fn largest_remainder(values: &[f64], total: u64) -> Vec<u64> {
    let mut counts: Vec<u64> = values.iter().map(|v| v.max(0.0).floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..values.len()).collect();
    let frac = |i: usize| values[i].max(0.0) - values[i].max(0.0).floor();
    if assigned <= total {
        order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
        let mut left = total - assigned;
        // more than one pass only when the inputs undershoot the total
        while left > 0 && !order.is_empty() {
            for &i in &order {
                if left == 0 {
                    break;
                }
                counts[i] += 1;
                left -= 1;
            }
        }
    } else {
        // inputs overshoot by rounding noise: take back from the smallest fractions
        order.sort_by(|&a, &b| frac(a).total_cmp(&frac(b)).then(b.cmp(&a)));
        let mut extra = assigned - total;
        while extra > 0 {
            for &i in &order {
                if extra == 0 {
                    break;
                }
                if counts[i] > 0 {
                    counts[i] -= 1;
                    extra -= 1;
                }
            }
        }
    }
    counts
}

/// Improve an integer allocation by moving single units between clients.
///
/// The objective is separable and convex in each `T_n`, so a point where no
/// single-unit move helps is the integer optimum. The total is unchanged and
/// `caps` bound every count from above.
#[allow(clippy::too_many_arguments)]
fn refine_counts(
    counts: &mut [u64],
    phi_n: &[f64],
    gamma_n: &[f64],
    omega_a: f64,
    omega_b: f64,
    z: u32,
    caps: Option<&[u64]>,
) {
    let term = |i: usize, t: u64| {
        let t = t as f64;
        omega_a * t.powi(z as i32 + 1) * phi_n[i] + omega_b * t * gamma_n[i]
    };
    let cap = |i: usize| caps.map_or(u64::MAX, |c| c[i]);
    let n = counts.len();
    loop {
        // largest saving from removing one unit, cheapest cost of adding one
        let mut donor = None;
        let mut receiver = None;
        for i in 0..n {
            if counts[i] > 0 {
                let saving = term(i, counts[i]) - term(i, counts[i] - 1);
                if donor.is_none_or(|(_, s)| saving > s) {
                    donor = Some((i, saving));
                }
            }
        }
        let Some((d, saving)) = donor else { return };
        for j in (0..n).filter(|&j| j != d && counts[j] < cap(j)) {
            let cost = term(j, counts[j] + 1) - term(j, counts[j]);
            if receiver.is_none_or(|(_, c)| cost < c) {
                receiver = Some((j, cost));
            }
        }
        let Some((r, cost)) = receiver else { return };
        if cost >= saving - 1e-12 * saving.abs() {
            return;
        }
        counts[d] -= 1;
        counts[r] += 1;
    }
}

/// Direct evaluation of the allocation objective
/// `omega_a * sum T_n^(z+1) Phi_n + omega_b * sum T_n Gamma_n`.
pub fn objective_value(
    counts: &[f64],
    phi_n: &[f64],
    gamma_n: &[f64],
    omega_a: f64,
    omega_b: f64,
    z: u32,
) -> f64 {
    counts
        .iter()
        .zip(phi_n.iter().zip(gamma_n))
        .map(|(&t, (&phi, &g))| omega_a * t.powi(z as i32 + 1) * phi + omega_b * t * g)
        .sum()
}

fn check_z(z: u32) -> Result<()> {
    if z != 1 && z != 2 {
        return param_err(format!("exponent z must be 1 or 2, got {z}"));
    }
    Ok(())
}

fn check_phi(phi_n: &[f64]) -> Result<()> {
    if phi_n.is_empty() {
        return param_err("no clients to plan for");
    }
    if let Some((i, p)) = phi_n
        .iter()
        .enumerate()
        .find(|(_, p)| !(**p > 0.0) || !p.is_finite())
    {
        return param_err(format!("Phi of client {i} must be finite and > 0, got {p}"));
    }
    Ok(())
}

/// Continuous noise-only allocation: `T_n = KT / sum_m (Phi_n / Phi_m)^(1/z)`.
pub fn approximate_counts(phi_n: &[f64], k: u64, horizon: u64, z: u32) -> Result<Vec<f64>> {
    check_z(z)?;
    check_phi(phi_n)?;
    Ok(closed_form(phi_n, (k * horizon) as f64, z))
}

fn closed_form(phi_n: &[f64], slots: f64, z: u32) -> Vec<f64> {
    let inv_z = 1.0 / z as f64;
    phi_n
        .iter()
        .map(|&phi| {
            let denom: f64 = phi_n.iter().map(|&other| (phi / other).powf(inv_z)).sum();
            slots / denom
        })
        .collect()
}

/// Noise-only plan over `k * horizon` slots: the closed form rounded by
/// largest remainder, then refined to the integer optimum.
pub fn approximate_plan(phi_n: &[f64], k: u64, horizon: u64, z: u32) -> Result<SelectionPlan> {
    check_z(z)?;
    check_phi(phi_n)?;
    if k == 0 || horizon == 0 {
        return param_err("K and horizon must be >= 1");
    }
    let slots = k * horizon;
    let continuous = closed_form(phi_n, slots as f64, z);
    let mut counts = largest_remainder(&continuous, slots);
    refine_counts(
        &mut counts,
        phi_n,
        &vec![0.0; phi_n.len()],
        1.0,
        0.0,
        z,
        None,
    );
    Ok(SelectionPlan::from_counts(counts, horizon, k))
}

/// [`approximate_plan`] with per-client upper bounds on `T_n`.
///
/// Falls back to water-filling with zero heterogeneity when the closed form
/// violates a cap. Clients with a zero cap are left out.
pub fn approximate_plan_capped(
    phi_n: &[f64],
    k: u64,
    horizon: u64,
    z: u32,
    caps: &[u64],
) -> Result<SelectionPlan> {
    let zeros = vec![0.0; phi_n.len()];
    optimal_plan_capped(phi_n, &zeros, 1.0, 0.0, k, horizon, z, caps)
}

/// Solution of the continuous relaxation and its dual multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct Relaxation {
    pub counts: Vec<f64>,
    pub multiplier: f64,
}

/// Water-filling solution of the relaxed allocation problem.
///
/// Stationarity gives `T_n(lambda) = ((lambda - omega_b Gamma_n) / ((z+1) omega_a Phi_n))^(1/z)`,
/// clamped to `[0, cap_n]`. The multiplier is found by bisection so the
/// counts sum to `total`. When the caps cannot absorb `total`, every client
/// sits at its cap.
#[allow(clippy::too_many_arguments)]
pub fn solve_relaxation(
    phi_n: &[f64],
    gamma_n: &[f64],
    omega_a: f64,
    omega_b: f64,
    z: u32,
    total: f64,
    caps: Option<&[f64]>,
) -> Result<Relaxation> {
    check_z(z)?;
    check_phi(phi_n)?;
    if gamma_n.len() != phi_n.len() {
        return param_err("Phi and Gamma lengths differ");
    }
    if let Some(c) = caps {
        if c.len() != phi_n.len() {
            return param_err("caps length differs from client count");
        }
    }
    if omega_a <= 0.0 || !omega_a.is_finite() {
        return param_err(format!("omega_a must be finite and > 0, got {omega_a}"));
    }
    if !omega_b.is_finite() {
        return param_err("omega_b must be finite");
    }
    if total < 0.0 || !total.is_finite() {
        return param_err(format!("total must be finite and >= 0, got {total}"));
    }
    let n = phi_n.len();
    let cap = |i: usize| caps.map_or(f64::INFINITY, |c| c[i]);
    let inv_z = 1.0 / z as f64;
    let zp1 = (z + 1) as f64;
    let alloc = |lambda: f64| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let num = lambda - omega_b * gamma_n[i];
                if num <= 0.0 {
                    0.0
                } else {
                    (num / (zp1 * omega_a * phi_n[i])).powf(inv_z).min(cap(i))
                }
            })
            .collect()
    };
    let sum = |v: &[f64]| v.iter().sum::<f64>();

    let cap_total: f64 = (0..n).map(cap).sum();
    if cap_total <= total {
        let counts: Vec<f64> = (0..n).map(cap).collect();
        let multiplier = f64::INFINITY;
        return Ok(Relaxation { counts, multiplier });
    }

    let floor = (0..n)
        .map(|i| omega_b * gamma_n[i])
        .fold(f64::INFINITY, f64::min);
    let mut lo = floor;
    let mut step = floor.abs().max(1e-300);
    let mut hi = floor + step;
    while sum(&alloc(hi)) < total {
        step *= 2.0;
        hi = floor + step;
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sum(&alloc(mid)) < total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // `hi` always satisfies sum >= total; prefer whichever endpoint is closer
    let lo_counts = alloc(lo);
    let hi_counts = alloc(hi);
    let (multiplier, counts) = if (total - sum(&lo_counts)).abs() < (sum(&hi_counts) - total).abs()
    {
        (lo, lo_counts)
    } else {
        (hi, hi_counts)
    };
    Ok(Relaxation { counts, multiplier })
}

/// Integer plan for the full allocation problem with fitted parameters:
/// water-filling, largest-remainder rounding, unit-exchange refinement.
///
/// `omega_a`/`omega_b` are recomputed from `params` on `horizon`.
pub fn optimal_plan(
    params: &EstimatedParams,
    horizon: u64,
    k: u64,
    z: u32,
) -> Result<SelectionPlan> {
    if horizon == 0 {
        return param_err("horizon must be >= 1");
    }
    let (omega_a, omega_b) = omega_coefficients(
        params.lambda,
        params.gamma,
        params.l_smooth,
        params.mu_convex,
        horizon,
        k,
    )?;
    let slots = k * horizon;
    let relaxed = solve_relaxation(
        &params.phi_n,
        &params.gamma_hat_n,
        omega_a,
        omega_b,
        z,
        slots as f64,
        None,
    )?;
    let mut counts = largest_remainder(&relaxed.counts, slots);
    refine_counts(
        &mut counts,
        &params.phi_n,
        &params.gamma_hat_n,
        omega_a,
        omega_b,
        z,
        None,
    );
    Ok(SelectionPlan::from_counts(counts, horizon, k))
}

/// Integer plan with explicit coefficients and per-client caps.
///
/// If the caps cannot absorb all `k * horizon` slots every client gets its
/// cap and the plan total falls short of the slot count.
#[allow(clippy::too_many_arguments)]
pub fn optimal_plan_capped(
    phi_n: &[f64],
    gamma_n: &[f64],
    omega_a: f64,
    omega_b: f64,
    k: u64,
    horizon: u64,
    z: u32,
    caps: &[u64],
) -> Result<SelectionPlan> {
    if horizon == 0 || k == 0 {
        return param_err("K and horizon must be >= 1");
    }
    if caps.len() != phi_n.len() {
        return param_err("caps length differs from client count");
    }
    let slots = k * horizon;
    let cap_total: u64 = caps.iter().sum();
    if cap_total <= slots {
        return Ok(SelectionPlan::from_counts(caps.to_vec(), horizon, k));
    }
    let capf: Vec<f64> = caps.iter().map(|&c| c as f64).collect();
    let relaxed = solve_relaxation(
        phi_n,
        gamma_n,
        omega_a,
        omega_b,
        z,
        slots as f64,
        Some(&capf),
    )?;
    let mut counts = largest_remainder(&relaxed.counts, slots);
    // flooring keeps each count at or below its integer cap
    debug_assert!(counts.iter().zip(caps).all(|(c, cap)| c <= cap));
    refine_counts(&mut counts, phi_n, gamma_n, omega_a, omega_b, z, Some(caps));
    Ok(SelectionPlan::from_counts(counts, horizon, k))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_preserves_total() {
        assert_eq!(largest_remainder(&[7.2, 1.8], 9), vec![7, 2]);
        assert_eq!(largest_remainder(&[1.5, 1.5], 3), vec![2, 1]);
        assert_eq!(
            largest_remainder(&[2.0000000001, 0.9999999999], 3),
            vec![2, 1]
        );
        assert_eq!(largest_remainder(&[0.0, 0.0], 3), vec![2, 1]);
        assert_eq!(largest_remainder(&[2.0, 2.0], 3), vec![2, 1]);
    }

    #[test]
    fn approximate_plan_examples() {
        let p = approximate_plan(&[1.0, 3.0], 1, 8, 1).unwrap();
        assert_eq!(p.counts, vec![6, 2]);
        let p = approximate_plan(&[1.0, 16.0], 1, 9, 2).unwrap();
        assert_eq!(p.counts, vec![7, 2]);
        let p = approximate_plan(&[2.5; 4], 3, 4, 1).unwrap();
        assert_eq!(p.counts, vec![3; 4]);
        assert!(approximate_plan(&[1.0, 0.0], 1, 4, 1).is_err());
        assert!(approximate_plan(&[1.0, -1.0], 1, 4, 2).is_err());
        assert!(approximate_plan(&[1.0], 1, 4, 3).is_err());
    }

    #[test]
    fn closed_form_literal() {
        let c = closed_form(&[1.0, 16.0], 9.0, 2);
        assert!((c[0] - 7.2).abs() < 1e-12 && (c[1] - 1.8).abs() < 1e-12);
    }

    #[test]
    fn objective_examples() {
        let j = objective_value(&[6.0, 2.0], &[1.0, 3.0], &[0.0, 0.0], 1.0, 0.0, 1);
        assert_eq!(j, 48.0);
        assert_eq!(
            objective_value(&[0.0, 0.0], &[1.0, 3.0], &[1.0, 1.0], 1.0, 1.0, 2),
            0.0
        );
        let j = objective_value(&[2.0, 3.0], &[1.0, 3.0], &[0.5, 2.0], 0.0, 2.0, 1);
        assert_eq!(j, 2.0 * (1.0 + 6.0));
    }

    fn params(phi: Vec<f64>, gamma: Vec<f64>) -> EstimatedParams {
        EstimatedParams {
            gamma_hat_n: gamma,
            rho_min_hat: 1.0,
            lambda: 1.0,
            phi_n: phi,
            gamma: 1.0,
            l_smooth: 1.0,
            mu_convex: 0.5,
            sigma_sq: 0.0,
            init_dist_sq: 1.0,
            omega_a: 0.0,
            omega_b: 0.0,
        }
    }

    #[test]
    fn water_filling_two_clients() {
        let r = solve_relaxation(&[1.0, 1.0], &[0.0, 10.0], 1.0, 1.0, 1, 4.0, None).unwrap();
        let plan = largest_remainder(&r.counts, 4);
        assert_eq!(plan, vec![4, 0]);
        let j = objective_value(&[4.0, 0.0], &[1.0, 1.0], &[0.0, 10.0], 1.0, 1.0, 1);
        assert_eq!(j, 16.0);
        let j31 = objective_value(&[3.0, 1.0], &[1.0, 1.0], &[0.0, 10.0], 1.0, 1.0, 1);
        assert_eq!(j31, 20.0);
    }

    #[test]
    fn zero_gamma_matches_approximate() {
        let phi = vec![0.3, 1.1, 2.0, 0.05];
        for z in [1, 2] {
            let p = optimal_plan(&params(phi.clone(), vec![0.0; 4]), 7, 3, z).unwrap();
            let a = approximate_plan(&phi, 3, 7, z).unwrap();
            assert_eq!(p.counts, a.counts);
        }
    }

    #[test]
    fn symmetric_instance_gives_uniform_plan() {
        let p = optimal_plan(&params(vec![0.4; 5], vec![0.7; 5]), 10, 2, 1).unwrap();
        assert_eq!(p.counts, vec![4; 5]);
    }

    #[test]
    fn caps_are_respected() {
        let p = approximate_plan_capped(&[0.01, 1.0, 1.0], 2, 5, 1, &[5, 5, 5]).unwrap();
        assert_eq!(p.counts[0], 5);
        assert_eq!(p.total(), 10);
        let p = approximate_plan_capped(&[0.01, 1.0, 1.0], 2, 5, 1, &[5, 0, 2]).unwrap();
        assert_eq!(p.counts, vec![5, 0, 2]);
    }

    #[test]
    fn infeasible_horizon() {
        assert!(optimal_plan(&params(vec![1.0], vec![0.0]), 0, 1, 1).is_err());
    }
}
