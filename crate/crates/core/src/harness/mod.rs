//! Data generation, partitioning, budget sampling and multi-seed comparisons.

mod budgets;
mod comparison;
mod csv_ingest;
mod partition;
mod synthetic;

pub use budgets::{sample_budgets, BudgetSamplingConfig};
pub use comparison::{final_metric, mean_std, run_comparison, Comparison, ComparisonRow, SeedRun};
pub use csv_ingest::{ingest_csv, standardize_columns, CsvDataset};
pub use partition::{dirichlet_partition, dirichlet_partition_indices, PartitionConfig};
pub use synthetic::{
    generate_synthetic_classification, generate_synthetic_regression, train_test_split,
};

use crate::config::{DatasetKind, ExperimentConfig};
use crate::engine::{ClientState, Dataset, Federation, ModelState};
use crate::error::{Error, Result};

/// The full dataset described by the config, before any split.
pub fn load_dataset(config: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    match config.dataset {
        DatasetKind::SyntheticRegression => Ok(generate_synthetic_regression(
            config.num_samples,
            config.feature_dim,
            config.noise_std,
            seed,
        )?
        .0),
        DatasetKind::SyntheticClassification => generate_synthetic_classification(
            config.num_samples,
            config.num_classes,
            config.feature_dim,
            config.class_separation,
            seed,
        ),
        DatasetKind::Csv => {
            let path = config
                .csv_path
                .as_ref()
                .ok_or_else(|| Error::Config("csv_path is required when dataset = csv".into()))?;
            Ok(ingest_csv(
                path,
                &config.csv_target,
                &config.csv_features,
                config.csv_standardize,
                config.csv_task,
            )?
            .dataset)
        }
    }
}

/// Train/test split, client partition, budgets and a zero model, all derived
/// from `seed`.
pub fn build_federation(config: &ExperimentConfig, seed: u64) -> Result<Federation> {
    let data = load_dataset(config, seed)?;
    let (train, test) = train_test_split(&data, config.test_fraction, seed)?;
    let parts = dirichlet_partition(
        &train,
        &PartitionConfig {
            num_clients: config.num_clients,
            dirichlet_alpha: config.dirichlet_alpha,
            seed,
        },
    )?;
    let budgets = sample_budgets(
        &BudgetSamplingConfig::for_mechanism(
            config.mechanism,
            (config.epsilon_min, config.epsilon_max),
            (config.delta_min, config.delta_max),
            seed,
        ),
        config.num_clients,
    )?;
    let clients = parts
        .into_iter()
        .zip(budgets)
        .enumerate()
        .map(|(id, (data, budget))| ClientState { id, data, budget })
        .collect();
    Ok(Federation {
        clients,
        initial_model: ModelState::for_dataset(&train),
        test,
    })
}
