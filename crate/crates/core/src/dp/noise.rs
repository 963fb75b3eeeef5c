use rand::Rng;
use rand_distr::{Open01, StandardNormal};

use super::{MechanismKind, NoiseSpec};
use crate::error::{param_err, Result};

/// Draw `dimension` i.i.d. noise coordinates for `spec` from `rng`.
///
/// A zero scale yields the zero vector without touching the stream.
pub fn sample_noise<R: Rng + ?Sized>(
    spec: &NoiseSpec,
    dimension: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if dimension == 0 {
        return param_err("noise dimension must be >= 1");
    }
    if !spec.scale.is_finite() || spec.scale < 0.0 {
        return param_err(format!(
            "noise scale must be finite and >= 0, got {}",
            spec.scale
        ));
    }
    if spec.scale == 0.0 {
        return Ok(vec![0.0; dimension]);
    }
    let scale = spec.scale;
    let out = match spec.mechanism {
        MechanismKind::Gaussian => (0..dimension)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect(),
        MechanismKind::Laplace => (0..dimension)
            .map(|_| {
                // inverse cdf on an open interval so the log never sees 0
                let u: f64 = rng.sample::<f64, _>(Open01) - 0.5;
                -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            })
            .collect(),
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn spec(mechanism: MechanismKind, scale: f64) -> NoiseSpec {
        NoiseSpec {
            scale,
            ..NoiseSpec::silent(mechanism)
        }
    }

    #[test]
    fn zero_scale_is_zero_vector() {
        let mut r = rng::client_round(1, 0, 1);
        let z = sample_noise(&spec(MechanismKind::Gaussian, 0.0), 5, &mut r).unwrap();
        assert_eq!(z, vec![0.0; 5]);
    }

    #[test]
    fn zero_dimension_is_rejected() {
        let mut r = rng::client_round(1, 0, 1);
        assert!(sample_noise(&spec(MechanismKind::Laplace, 1.0), 0, &mut r).is_err());
    }

    #[test]
    fn identical_streams_give_identical_noise() {
        for m in [MechanismKind::Gaussian, MechanismKind::Laplace] {
            let a = sample_noise(&spec(m, 0.7), 16, &mut rng::client_round(3, 4, 5)).unwrap();
            let b = sample_noise(&spec(m, 0.7), 16, &mut rng::client_round(3, 4, 5)).unwrap();
            assert_eq!(a, b);
        }
    }

    fn empirical_variance(m: MechanismKind, scale: f64, draws: usize) -> f64 {
        let mut r = rng::derive(99, rng::Purpose::ClientNoise, 0, 0);
        let z = sample_noise(&spec(m, scale), draws, &mut r).unwrap();
        let mean = z.iter().sum::<f64>() / draws as f64;
        z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws - 1) as f64
    }

    #[test]
    fn gaussian_variance_monte_carlo() {
        let sigma = 1.7;
        let v = empirical_variance(MechanismKind::Gaussian, sigma, 1_000_000);
        let target = sigma * sigma;
        assert!(v > 0.97 * target && v < 1.03 * target, "{v} vs {target}");
    }

    #[test]
    fn laplace_variance_monte_carlo() {
        let b = 0.4;
        let v = empirical_variance(MechanismKind::Laplace, b, 1_000_000);
        let target = 2.0 * b * b;
        assert!(v > 0.97 * target && v < 1.03 * target, "{v} vs {target}");
    }
}
