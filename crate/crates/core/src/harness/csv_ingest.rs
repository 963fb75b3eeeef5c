use std::collections::BTreeSet;
use std::path::Path;

use crate::config::TaskKind;
use crate::engine::{Dataset, Targets};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsvDataset {
    pub dataset: Dataset,
    /// Rows skipped because a used cell was empty.
    pub dropped_rows: usize,
    /// Original label values in class-index order (classification only).
    pub class_names: Vec<String>,
}

fn is_missing(cell: &str) -> bool {
    matches!(
        cell.trim().to_ascii_lowercase().as_str(),
        "" | "na" | "nan" | "null"
    )
}

/// Load the chosen columns. Rows with a missing cell are dropped and counted;
/// non-numeric cells are an error naming every offending line.
pub fn ingest_csv(
    path: &Path,
    target_column: &str,
    feature_columns: &[String],
    standardize: bool,
    task: TaskKind,
) -> Result<CsvDataset> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| {
                Error::Parameter(format!("column `{name}` not found in {}", path.display()))
            })
    };
    let target_idx = find(target_column)?;
    let feature_idx = feature_columns
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;

    let mut features = Vec::new();
    let mut raw_targets = Vec::new();
    let mut dropped = 0usize;
    let mut bad_lines = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // header is line 1
        let line = i + 2;
        let cell = |j: usize| record.get(j).unwrap_or("");
        if is_missing(cell(target_idx)) || feature_idx.iter().any(|&j| is_missing(cell(j))) {
            dropped += 1;
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> = feature_idx
            .iter()
            .map(|&j| cell(j).trim().parse::<f64>())
            .collect();
        let target = cell(target_idx).trim().to_string();
        let target_ok = task == TaskKind::Classification || target.parse::<f64>().is_ok();
        match row {
            Ok(row) if target_ok && row.iter().all(|v| v.is_finite()) => {
                features.push(row);
                raw_targets.push(target);
            }
            _ => bad_lines.push(line),
        }
    }
    if !bad_lines.is_empty() {
        let listed: Vec<String> = bad_lines.iter().map(ToString::to_string).collect();
        return Err(Error::Parameter(format!(
            "{}: non-numeric values on line(s) {}",
            path.display(),
            listed.join(", ")
        )));
    }
    if features.is_empty() {
        return Err(Error::Parameter(format!(
            "{}: no usable rows",
            path.display()
        )));
    }
    if dropped > 0 {
        log::info!(
            "{}: dropped {dropped} row(s) with missing values",
            path.display()
        );
    }
    if standardize {
        standardize_columns(&mut features);
    }

    let (targets, class_names) = match task {
        TaskKind::Regression => (
            Targets::Real(raw_targets.iter().map(|t| t.parse().unwrap()).collect()),
            Vec::new(),
        ),
        TaskKind::Classification => {
            let mut names: Vec<String> = raw_targets
                .iter()
                .cloned()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            if names.iter().all(|n| n.parse::<f64>().is_ok()) {
                names.sort_by(|a, b| {
                    a.parse::<f64>()
                        .unwrap()
                        .total_cmp(&b.parse::<f64>().unwrap())
                });
            }
            let labels = raw_targets
                .iter()
                .map(|t| names.iter().position(|n| n == t).unwrap())
                .collect();
            (
                Targets::Labels {
                    labels,
                    num_classes: names.len(),
                },
                names,
            )
        }
    };
    Ok(CsvDataset {
        dataset: Dataset::new(features, targets)?,
        dropped_rows: dropped,
        class_names,
    })
}

/// Zero mean, unit population variance per column; constant columns become zero.
pub fn standardize_columns(rows: &mut [Vec<f64>]) {
    let Some(width) = rows.first().map(Vec::len) else {
        return;
    };
    let n = rows.len() as f64;
    for j in 0..width {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        for r in rows.iter_mut() {
            r[j] = if std > 0.0 { (r[j] - mean) / std } else { 0.0 };
        }
    }
}
