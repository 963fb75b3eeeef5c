//! Convex models: least-squares linear regression and multinomial logistic
//! regression, each with a bias term.

use serde::{Deserialize, Serialize};

use super::data::{Dataset, Targets};
use crate::dp::{clip_in_place, ClipConfig};
use crate::error::{param_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    LinearRegression,
    LogisticRegression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub kind: ModelKind,
    pub feature_dim: usize,
    /// 1 for regression.
    pub num_outputs: usize,
    /// `num_outputs` rows of `feature_dim + 1` weights, bias last.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub loss: f64,
    pub accuracy: Option<f64>,
}

impl ModelState {
    pub fn zeros(kind: ModelKind, feature_dim: usize, num_classes: usize) -> Self {
        let num_outputs = match kind {
            ModelKind::LinearRegression => 1,
            ModelKind::LogisticRegression => num_classes,
        };
        Self {
            kind,
            feature_dim,
            num_outputs,
            weights: vec![0.0; num_outputs * (feature_dim + 1)],
        }
    }

    /// Model matching the target type of `data`.
    pub fn for_dataset(data: &Dataset) -> Self {
        match &data.targets {
            Targets::Real(_) => Self::zeros(ModelKind::LinearRegression, data.feature_dim(), 1),
            Targets::Labels { num_classes, .. } => Self::zeros(
                ModelKind::LogisticRegression,
                data.feature_dim(),
                *num_classes,
            ),
        }
    }

    pub fn dimension(&self) -> usize {
        self.weights.len()
    }

    fn check(&self, data: &Dataset) -> Result<()> {
        if data.feature_dim() != self.feature_dim && !data.is_empty() {
            return param_err(format!(
                "model expects {} features, data has {}",
                self.feature_dim,
                data.feature_dim()
            ));
        }
        match (&self.kind, &data.targets) {
            (ModelKind::LinearRegression, Targets::Real(_)) => Ok(()),
            (ModelKind::LogisticRegression, Targets::Labels { num_classes, .. })
                if *num_classes == self.num_outputs =>
            {
                Ok(())
            }
            _ => param_err("model kind does not match the dataset targets"),
        }
    }

    fn row_score(&self, row: usize, x: &[f64]) -> f64 {
        let w = &self.weights[row * (self.feature_dim + 1)..(row + 1) * (self.feature_dim + 1)];
        w[..self.feature_dim]
            .iter()
            .zip(x)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + w[self.feature_dim]
    }

    fn softmax(&self, x: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = (0..self.num_outputs)
            .map(|c| self.row_score(c, x))
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / total).collect()
    }

    /// Loss of the sample at `i`.
    pub fn sample_loss(&self, data: &Dataset, i: usize) -> f64 {
        let x = &data.features[i];
        match &data.targets {
            Targets::Real(y) => {
                let r = self.row_score(0, x) - y[i];
                r * r
            }
            Targets::Labels { labels, .. } => {
                let logits: Vec<f64> = (0..self.num_outputs)
                    .map(|c| self.row_score(c, x))
                    .collect();
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
                lse - logits[labels[i]]
            }
        }
    }

    /// Unclipped gradient of the loss of sample `i`, written into `out`.
    pub fn sample_gradient_into(&self, data: &Dataset, i: usize, out: &mut [f64]) {
        let x = &data.features[i];
        let stride = self.feature_dim + 1;
        match &data.targets {
            Targets::Real(y) => {
                let r = 2.0 * (self.row_score(0, x) - y[i]);
                for (o, xi) in out[..self.feature_dim].iter_mut().zip(x) {
                    *o = r * xi;
                }
                out[self.feature_dim] = r;
            }
            Targets::Labels { labels, .. } => {
                let p = self.softmax(x);
                for (c, pc) in p.iter().enumerate() {
                    let coeff = pc - if c == labels[i] { 1.0 } else { 0.0 };
                    let row = &mut out[c * stride..(c + 1) * stride];
                    for (o, xi) in row[..self.feature_dim].iter_mut().zip(x) {
                        *o = coeff * xi;
                    }
                    row[self.feature_dim] = coeff;
                }
            }
        }
    }

    pub fn sample_gradient(&self, data: &Dataset, i: usize) -> Vec<f64> {
        let mut g = vec![0.0; self.dimension()];
        self.sample_gradient_into(data, i, &mut g);
        g
    }

    /// Uncapped mean loss and, for classifiers, accuracy. Never private.
    pub fn evaluate(&self, data: &Dataset) -> Result<Metrics> {
        self.check(data)?;
        if data.is_empty() {
            return param_err("cannot evaluate on an empty dataset");
        }
        let loss = (0..data.len())
            .map(|i| self.sample_loss(data, i))
            .sum::<f64>()
            / data.len() as f64;
        let accuracy = data.labels().map(|labels| {
            let correct = labels
                .iter()
                .enumerate()
                .filter(|(i, &y)| {
                    let x = &data.features[*i];
                    let best = (0..self.num_outputs)
                        .map(|c| (c, self.row_score(c, x)))
                        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                        .map(|(c, _)| c);
                    best == Some(y)
                })
                .count();
            correct as f64 / labels.len() as f64
        });
        Ok(Metrics { loss, accuracy })
    }
}

/// Mean per-sample loss with each sample's loss capped to `[0, loss_cap]`.
pub fn local_loss(model: &ModelState, data: &Dataset, loss_cap: f64) -> Result<f64> {
    model.check(data)?;
    if data.is_empty() {
        return param_err("local dataset is empty");
    }
    let total: f64 = (0..data.len())
        .map(|i| model.sample_loss(data, i).clamp(0.0, loss_cap))
        .sum();
    Ok(total / data.len() as f64)
}

/// `eta` times the mean of the clipped per-sample gradients.
pub fn local_gradient(
    model: &ModelState,
    data: &Dataset,
    learning_rate: f64,
    clip: &ClipConfig,
) -> Result<Vec<f64>> {
    model.check(data)?;
    if data.is_empty() {
        return param_err("local dataset is empty");
    }
    let dim = model.dimension();
    let mut sum = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    for i in 0..data.len() {
        model.sample_gradient_into(data, i, &mut g);
        clip_in_place(&mut g, clip);
        for (s, v) in sum.iter_mut().zip(&g) {
            *s += v;
        }
    }
    let scale = learning_rate / data.len() as f64;
    Ok(sum.into_iter().map(|s| s * scale).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::{norm, NormKind};

    fn regression(rows: Vec<Vec<f64>>, y: Vec<f64>) -> Dataset {
        Dataset::new(rows, Targets::Real(y)).unwrap()
    }

    #[test]
    fn perfect_fit_has_zero_loss() {
        let data = regression(vec![vec![1.0, 2.0], vec![-1.0, 0.5]], vec![3.5, -0.75]);
        let mut m = ModelState::for_dataset(&data);
        m.weights = vec![1.0, 1.5, -0.5];
        assert_eq!(local_loss(&m, &data, 100.0).unwrap(), 0.0);
    }

    #[test]
    fn uniform_classifier_loss_is_ln_classes() {
        let data = Dataset::new(
            vec![vec![0.3, -1.0]; 4],
            Targets::Labels {
                labels: vec![0, 3, 7, 9],
                num_classes: 10,
            },
        )
        .unwrap();
        let m = ModelState::for_dataset(&data);
        let l = local_loss(&m, &data, 10.0).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_cap_applies_per_sample() {
        // residuals 1 and 10 give per-sample losses 1 and 100
        let data = regression(vec![vec![0.0], vec![0.0]], vec![1.0, 10.0]);
        let m = ModelState::for_dataset(&data);
        assert_eq!(local_loss(&m, &data, 10.0).unwrap(), 5.5);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let data = regression(vec![vec![1.0, 2.0]], vec![0.0]);
        let m = ModelState::zeros(ModelKind::LinearRegression, 3, 1);
        assert!(local_loss(&m, &data, 1.0).is_err());
        let empty = regression(vec![], vec![]);
        assert!(local_gradient(
            &m,
            &empty,
            0.1,
            &ClipConfig {
                bound: 1.0,
                norm_kind: NormKind::L2
            }
        )
        .is_err());
    }

    #[test]
    fn zero_rate_gives_zero_gradient() {
        let data = regression(vec![vec![1.0, 2.0]], vec![4.0]);
        let m = ModelState::for_dataset(&data);
        let clip = ClipConfig {
            bound: 1.0,
            norm_kind: NormKind::L2,
        };
        assert_eq!(local_gradient(&m, &data, 0.0, &clip).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn boundary_gradients_give_eta_b() {
        // identical samples, gradient far outside the ball
        let data = regression(vec![vec![3.0, 4.0]; 5], vec![100.0; 5]);
        let m = ModelState::for_dataset(&data);
        let clip = ClipConfig {
            bound: 2.0,
            norm_kind: NormKind::L2,
        };
        let g = local_gradient(&m, &data, 0.1, &clip).unwrap();
        assert!((norm(&g, NormKind::L2) - 0.2).abs() < 1e-12);
    }
}
