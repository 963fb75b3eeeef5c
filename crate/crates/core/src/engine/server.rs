use rand::Rng;

use crate::error::{param_err, Result};

/// Weighted sum of client updates, accumulated in the given order.
///
/// Returns `None` for an empty list; the caller skips the round.
pub fn aggregate_weighted(gradients: &[Vec<f64>], weights: &[f64]) -> Result<Option<Vec<f64>>> {
    if gradients.len() != weights.len() {
        return param_err("one weight per gradient is required");
    }
    let Some(first) = gradients.first() else {
        return Ok(None);
    };
    let dim = first.len();
    let mut out = vec![0.0; dim];
    for (g, w) in gradients.iter().zip(weights) {
        if g.len() != dim {
            return param_err("gradients differ in dimension");
        }
        for (o, v) in out.iter_mut().zip(g) {
            *o += w * v;
        }
    }
    Ok(Some(out))
}

/// `(1/K) * sum of gradients`. The divisor stays `K` even when fewer
/// clients responded.
pub fn aggregate(gradients: &[Vec<f64>], k: usize) -> Result<Option<Vec<f64>>> {
    if k == 0 {
        return param_err("K must be >= 1");
    }
    let w = vec![1.0 / k as f64; gradients.len()];
    aggregate_weighted(gradients, &w)
}

/// Draw up to `k` distinct clients from `candidates`, sequentially and
/// without replacement, with weights `probabilities[n]` renormalised over the
/// remaining pool. Returns ascending ids.
///
/// If the pool holds at most `k` clients all of them are returned. Clients
/// with zero weight are only drawn once no positive weight is left.
pub fn sample_selection<R: Rng + ?Sized>(
    probabilities: &[f64],
    candidates: &[usize],
    k: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut chosen: Vec<usize> = if candidates.len() <= k {
        candidates.to_vec()
    } else {
        let mut pool: Vec<usize> = candidates.to_vec();
        pool.sort_unstable();
        let mut picked = Vec::with_capacity(k);
        while picked.len() < k {
            let weight = |n: usize| probabilities.get(n).copied().unwrap_or(0.0).max(0.0);
            let total: f64 = pool.iter().map(|&n| weight(n)).sum();
            let idx = if total > 0.0 {
                let u = rng.random::<f64>() * total;
                let mut acc = 0.0;
                let mut idx = None;
                for (i, &n) in pool.iter().enumerate() {
                    let w = weight(n);
                    acc += w;
                    if w > 0.0 && u < acc {
                        idx = Some(i);
                        break;
                    }
                }
                // float round-off at the top end: take the last positive weight
                idx.unwrap_or_else(|| pool.iter().rposition(|&n| weight(n) > 0.0).unwrap())
            } else {
                rng.random_range(0..pool.len())
            };
            picked.push(pool.remove(idx));
        }
        picked
    };
    chosen.sort_unstable();
    chosen
}
