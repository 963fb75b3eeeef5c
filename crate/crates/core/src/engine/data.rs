use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    Real(Vec<f64>),
    Labels {
        labels: Vec<usize>,
        num_classes: usize,
    },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Real(v) => v.len(),
            Targets::Labels { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Row-major samples with their targets. Also used for a client's local data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub targets: Targets,
}

pub type LocalDataset = Dataset;

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, targets: Targets) -> Result<Self> {
        if features.len() != targets.len() {
            return param_err(format!(
                "{} feature rows but {} targets",
                features.len(),
                targets.len()
            ));
        }
        if let Some(first) = features.first() {
            let width = first.len();
            if let Some(i) = features.iter().position(|r| r.len() != width) {
                return param_err(format!(
                    "row {i} has {} features, expected {width}",
                    features[i].len()
                ));
            }
        }
        if let Targets::Labels {
            labels,
            num_classes,
        } = &targets
        {
            if let Some(&bad) = labels.iter().find(|&&l| l >= *num_classes) {
                return param_err(format!("label {bad} outside 0..{num_classes}"));
            }
        }
        Ok(Self { features, targets })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn num_classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Labels { num_classes, .. } => Some(*num_classes),
            Targets::Real(_) => None,
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Labels { labels, .. } => Some(labels),
            Targets::Real(_) => None,
        }
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let features = indices.iter().map(|&i| self.features[i].clone()).collect();
        let targets = match &self.targets {
            Targets::Real(v) => Targets::Real(indices.iter().map(|&i| v[i]).collect()),
            Targets::Labels {
                labels,
                num_classes,
            } => Targets::Labels {
                labels: indices.iter().map(|&i| labels[i]).collect(),
                num_classes: *num_classes,
            },
        };
        Self { features, targets }
    }
}
