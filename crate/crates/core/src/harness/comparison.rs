use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::build_federation;
use crate::config::ExperimentConfig;
use crate::dp::MechanismKind;
use crate::engine::{run, Algorithm, RunHistory};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub algorithm: Algorithm,
    pub mechanism: MechanismKind,
    pub mean_final_metric: f64,
    pub std_final_metric: f64,
    pub num_seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    /// Position of the algorithm in the requested list.
    pub entry: usize,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub history: RunHistory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// Per entry, the mean test metric after each round over the seeds that
    /// reached that round.
    pub mean_curves: Vec<(Algorithm, Vec<f64>)>,
    /// Sorted by entry, then by seed.
    pub runs: Vec<SeedRun>,
}

/// Accuracy for classifiers, test loss (MSE) otherwise.
pub fn final_metric(history: &RunHistory) -> f64 {
    history
        .summary
        .final_test_accuracy
        .unwrap_or(history.summary.final_test_loss)
}

fn round_metric(r: &crate::engine::RoundRecord) -> f64 {
    r.test_accuracy.unwrap_or(r.test_loss)
}

/// Mean and sample standard deviation; the deviation of one value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Every algorithm on seeds `config.seed .. config.seed + num_seeds`. All
/// algorithms at one seed share the partition, budgets and starting model.
pub fn run_comparison(
    config: &ExperimentConfig,
    algorithms: &[Algorithm],
    num_seeds: usize,
) -> Result<Comparison> {
    if algorithms.is_empty() || num_seeds == 0 {
        return Err(Error::Parameter(
            "need at least one algorithm and one seed".into(),
        ));
    }
    config.validate()?;
    let training = config.training_config();
    let seeds: Vec<u64> = (0..num_seeds as u64).map(|s| config.seed + s).collect();
    let per_seed: Vec<Result<Vec<SeedRun>>> = seeds
        .par_iter()
        .map(|&seed| {
            let federation = build_federation(config, seed)
                .map_err(|e| Error::State(format!("seed {seed}: building data failed: {e}")))?;
            algorithms
                .iter()
                .enumerate()
                .map(|(entry, &algorithm)| {
                    run(algorithm, &training, &federation, seed)
                        .map(|history| SeedRun {
                            entry,
                            algorithm,
                            seed,
                            history,
                        })
                        .map_err(|e| {
                            Error::State(format!("seed {seed}, algorithm {algorithm}: {e}"))
                        })
                })
                .collect()
        })
        .collect();
    let mut runs = Vec::new();
    for r in per_seed {
        runs.extend(r?);
    }
    runs.sort_by_key(|r| (r.entry, r.seed));

    let mut rows = Vec::new();
    let mut mean_curves = Vec::new();
    for (entry, &algorithm) in algorithms.iter().enumerate() {
        let mine: Vec<&SeedRun> = runs.iter().filter(|r| r.entry == entry).collect();
        let finals: Vec<f64> = mine.iter().map(|r| final_metric(&r.history)).collect();
        let (mean, std) = mean_std(&finals);
        rows.push(ComparisonRow {
            algorithm,
            mechanism: config.mechanism,
            mean_final_metric: mean,
            std_final_metric: std,
            num_seeds,
        });
        let len = mine
            .iter()
            .map(|r| r.history.rounds.len())
            .max()
            .unwrap_or(0);
        let curve = (0..len)
            .map(|t| {
                let vals: Vec<f64> = mine
                    .iter()
                    .filter_map(|r| r.history.rounds.get(t).map(round_metric))
                    .collect();
                vals.iter().sum::<f64>() / vals.len() as f64
            })
            .collect();
        mean_curves.push((algorithm, curve));
    }
    Ok(Comparison {
        rows,
        mean_curves,
        runs,
    })
}

impl Comparison {
    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "algorithm",
            "mechanism",
            "mean_final_metric",
            "std_final_metric",
            "num_seeds",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.algorithm.to_string(),
                r.mechanism.to_string(),
                r.mean_final_metric.to_string(),
                r.std_final_metric.to_string(),
                r.num_seeds.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Raw histories, mean curves and the summary table under `dir`.
    pub fn persist(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for r in &self.runs {
            let name = format!("history_{}_{}_seed{}.jsonl", r.entry, r.algorithm, r.seed);
            r.history.write_jsonl(&dir.join(name))?;
        }
        let mut curves = fs::File::create(dir.join("curves.csv"))?;
        writeln!(curves, "entry,algorithm,t,mean_metric")?;
        for (e, (a, c)) in self.mean_curves.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                writeln!(curves, "{e},{a},{},{v}", i + 1)?;
            }
        }
        self.write_summary_csv(&dir.join("summary.csv"))
    }
}
