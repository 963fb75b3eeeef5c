use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::engine::{Dataset, Targets};
use crate::error::{param_err, Result};
use crate::rng::{self, Purpose};

/// Standard-normal features, `y = x . w* + noise`. Returns the data and `w*`.
pub fn generate_synthetic_regression(
    num_samples: usize,
    feature_dim: usize,
    noise_std: f64,
    seed: u64,
) -> Result<(Dataset, Vec<f64>)> {
    if feature_dim == 0 {
        return param_err("feature_dim must be >= 1");
    }
    if noise_std < 0.0 || !noise_std.is_finite() {
        return param_err(format!("noise_std must be >= 0, got {noise_std}"));
    }
    let mut r = rng::derive(seed, Purpose::Dataset, 0, 0);
    let w: Vec<f64> = (0..feature_dim).map(|_| r.sample(StandardNormal)).collect();
    let mut features = Vec::with_capacity(num_samples);
    let mut targets = Vec::with_capacity(num_samples);
    for _ in 0..num_samples {
        let x: Vec<f64> = (0..feature_dim).map(|_| r.sample(StandardNormal)).collect();
        let e: f64 = r.sample(StandardNormal);
        targets.push(x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + noise_std * e);
        features.push(x);
    }
    Ok((Dataset::new(features, Targets::Real(targets))?, w))
}

/// Class centers `separation` apart: scaled unit vectors when there are
/// enough dimensions, otherwise evenly spaced points on a circle (or a line
/// in one dimension) with adjacent centers `separation` apart.
fn class_centers(num_classes: usize, feature_dim: usize, separation: f64) -> Vec<Vec<f64>> {
    (0..num_classes)
        .map(|c| {
            let mut v = vec![0.0; feature_dim];
            if feature_dim >= num_classes {
                v[c] = separation / std::f64::consts::SQRT_2;
            } else if feature_dim == 1 {
                v[0] = separation * c as f64;
            } else {
                let angle = 2.0 * std::f64::consts::PI * c as f64 / num_classes as f64;
                let chord = 2.0 * (std::f64::consts::PI / num_classes as f64).sin();
                let radius = separation / chord;
                v[0] = radius * angle.cos();
                v[1] = radius * angle.sin();
            }
            v
        })
        .collect()
}

/// Unit-variance Gaussian blobs, one per class, with balanced labels.
pub fn generate_synthetic_classification(
    num_samples: usize,
    num_classes: usize,
    feature_dim: usize,
    class_separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 {
        return param_err("num_classes must be >= 2");
    }
    if feature_dim == 0 {
        return param_err("feature_dim must be >= 1");
    }
    if class_separation < 0.0 || !class_separation.is_finite() {
        return param_err(format!(
            "class_separation must be >= 0, got {class_separation}"
        ));
    }
    let mut r = rng::derive(seed, Purpose::Dataset, 1, 0);
    let centers = class_centers(num_classes, feature_dim, class_separation);
    let mut labels: Vec<usize> = (0..num_samples).map(|i| i % num_classes).collect();
    labels.shuffle(&mut r);
    let features = labels
        .iter()
        .map(|&l| {
            centers[l]
                .iter()
                .map(|c| c + r.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    Dataset::new(
        features,
        Targets::Labels {
            labels,
            num_classes,
        },
    )
}

/// Shuffled split; returns `(train, test)` with `round(fraction * n)` test rows.
pub fn train_test_split(
    dataset: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return param_err(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        ));
    }
    let n = dataset.len();
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    if n < 2 {
        return param_err("need at least two samples to split");
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::derive(seed, Purpose::TestSplit, 0, 0));
    let (test, train) = idx.split_at(n_test);
    let mut train = train.to_vec();
    let mut test = test.to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((dataset.subset(&train), dataset.subset(&test)))
}
