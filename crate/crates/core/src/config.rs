//! Flat `key = value` experiment configuration.
//!
//! Lines starting with `#` are comments. Every key has a default, and
//! [`ExperimentConfig::snapshot`] writes all resolved values back out so a
//! run can be reproduced from the snapshot alone.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dp::MechanismKind;
use crate::engine::{Algorithm, LearningRateSchedule, TrainingConfig};
use crate::error::{Error, Result};
use crate::selection::FitSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    SyntheticRegression,
    SyntheticClassification,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Regression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Experiment,
    Theory,
    Constant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub algorithms: Vec<Algorithm>,
    pub mechanism: MechanismKind,
    pub num_clients: usize,
    pub clients_per_round: usize,
    pub rounds: usize,
    pub stage_one_rounds: usize,
    pub clip_bound: f64,
    pub loss_cap: f64,
    pub c2: f64,
    pub lr_schedule: ScheduleKind,
    pub lr_initial: f64,
    pub lr_decay_horizon: f64,
    pub lr_mu: f64,
    pub lr_gamma: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub dirichlet_alpha: f64,
    pub epsilon_min: f64,
    pub epsilon_max: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    pub dataset: DatasetKind,
    pub num_samples: usize,
    pub test_fraction: f64,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub noise_std: f64,
    pub class_separation: f64,
    pub csv_path: Option<PathBuf>,
    pub csv_target: String,
    pub csv_features: Vec<String>,
    pub csv_task: TaskKind,
    pub csv_standardize: bool,
    pub seed: u64,
    pub num_seeds: usize,
    pub output_dir: PathBuf,
    pub divide_by_responders: bool,
    pub zero_noise: bool,
    pub force_uniform_plan: bool,
    pub winsorize_quantile: f64,
    pub fit_upper_bound: f64,
    pub fit_max_sweeps: usize,
    pub fit_tolerance: f64,
    pub fit_line_tolerance: f64,
    pub budget_log_interval: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let fit = FitSettings::default();
        Self {
            algorithms: vec![Algorithm::DpflBcs],
            mechanism: MechanismKind::Gaussian,
            num_clients: 100,
            clients_per_round: 20,
            rounds: 200,
            stage_one_rounds: 10,
            clip_bound: 5.0,
            loss_cap: 10.0,
            c2: 1.0,
            lr_schedule: ScheduleKind::Experiment,
            lr_initial: 0.1,
            lr_decay_horizon: 200.0,
            lr_mu: 1.0,
            lr_gamma: 8.0,
            momentum: 0.0,
            weight_decay: 0.0,
            dirichlet_alpha: 3.0,
            epsilon_min: 0.5,
            epsilon_max: 5.0,
            delta_min: 1e-5,
            delta_max: 1e-4,
            dataset: DatasetKind::SyntheticRegression,
            num_samples: 12_500,
            test_fraction: 0.2,
            feature_dim: 10,
            num_classes: 10,
            noise_std: 0.5,
            class_separation: 3.0,
            csv_path: None,
            csv_target: String::new(),
            csv_features: Vec::new(),
            csv_task: TaskKind::Regression,
            csv_standardize: true,
            seed: 0,
            num_seeds: 1,
            output_dir: PathBuf::from("out"),
            divide_by_responders: false,
            zero_noise: false,
            force_uniform_plan: false,
            winsorize_quantile: 0.95,
            fit_upper_bound: fit.upper_bound,
            fit_max_sweeps: fit.max_sweeps,
            fit_tolerance: fit.tolerance,
            fit_line_tolerance: fit.line_tolerance,
            budget_log_interval: 10,
        }
    }
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => config_err(format!("{key}: expected true or false, got `{value}`")),
    }
}

fn list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

impl ExperimentConfig {
    /// Parse a config file's text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return config_err(format!("line {}: expected `key = value`", i + 1));
            };
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, strip(e))))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let Some((key, value)) = assignment.split_once('=') else {
            return config_err(format!("override `{assignment}` is not key=value"));
        };
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "algorithm" => {
                self.algorithms = list(value)
                    .iter()
                    .map(|s| s.parse())
                    .collect::<Result<_>>()
                    .map_err(|e| Error::Config(format!("algorithm: {}", strip(e))))?
            }
            "mechanism" => {
                self.mechanism = value
                    .parse()
                    .map_err(|e| Error::Config(format!("mechanism: {}", strip(e))))?
            }
            "num_clients" => self.num_clients = parse_num(key, value)?,
            "clients_per_round" => self.clients_per_round = parse_num(key, value)?,
            "rounds" => self.rounds = parse_num(key, value)?,
            "stage_one_rounds" => self.stage_one_rounds = parse_num(key, value)?,
            "clip_bound" => self.clip_bound = parse_num(key, value)?,
            "loss_cap" => self.loss_cap = parse_num(key, value)?,
            "c2" => self.c2 = parse_num(key, value)?,
            "lr_schedule" => {
                self.lr_schedule = match value {
                    "experiment" => ScheduleKind::Experiment,
                    "theory" => ScheduleKind::Theory,
                    "constant" => ScheduleKind::Constant,
                    _ => return config_err(format!("lr_schedule: unknown schedule `{value}`")),
                }
            }
            "lr_initial" => self.lr_initial = parse_num(key, value)?,
            "lr_decay_horizon" => self.lr_decay_horizon = parse_num(key, value)?,
            "lr_mu" => self.lr_mu = parse_num(key, value)?,
            "lr_gamma" => self.lr_gamma = parse_num(key, value)?,
            "momentum" => self.momentum = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "dirichlet_alpha" => self.dirichlet_alpha = parse_num(key, value)?,
            "epsilon_min" => self.epsilon_min = parse_num(key, value)?,
            "epsilon_max" => self.epsilon_max = parse_num(key, value)?,
            "delta_min" => self.delta_min = parse_num(key, value)?,
            "delta_max" => self.delta_max = parse_num(key, value)?,
            "dataset" => {
                self.dataset = match value {
                    "synthetic-regression" => DatasetKind::SyntheticRegression,
                    "synthetic-classification" => DatasetKind::SyntheticClassification,
                    "csv" => DatasetKind::Csv,
                    _ => return config_err(format!("dataset: unknown dataset `{value}`")),
                }
            }
            "num_samples" => self.num_samples = parse_num(key, value)?,
            "test_fraction" => self.test_fraction = parse_num(key, value)?,
            "feature_dim" => self.feature_dim = parse_num(key, value)?,
            "num_classes" => self.num_classes = parse_num(key, value)?,
            "noise_std" => self.noise_std = parse_num(key, value)?,
            "class_separation" => self.class_separation = parse_num(key, value)?,
            "csv_path" => {
                self.csv_path = (!value.is_empty()).then(|| PathBuf::from(value));
            }
            "csv_target" => self.csv_target = value.to_string(),
            "csv_features" => self.csv_features = list(value),
            "csv_task" => {
                self.csv_task = match value {
                    "regression" => TaskKind::Regression,
                    "classification" => TaskKind::Classification,
                    _ => return config_err(format!("csv_task: unknown task `{value}`")),
                }
            }
            "csv_standardize" => self.csv_standardize = parse_bool(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "num_seeds" => self.num_seeds = parse_num(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "divide_by_responders" => self.divide_by_responders = parse_bool(key, value)?,
            "zero_noise" => self.zero_noise = parse_bool(key, value)?,
            "force_uniform_plan" => self.force_uniform_plan = parse_bool(key, value)?,
            "winsorize_quantile" => self.winsorize_quantile = parse_num(key, value)?,
            "fit_upper_bound" => self.fit_upper_bound = parse_num(key, value)?,
            "fit_max_sweeps" => self.fit_max_sweeps = parse_num(key, value)?,
            "fit_tolerance" => self.fit_tolerance = parse_num(key, value)?,
            "fit_line_tolerance" => self.fit_line_tolerance = parse_num(key, value)?,
            "budget_log_interval" => self.budget_log_interval = parse_num(key, value)?,
            _ => return config_err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Field-level validation of every cross-field constraint.
    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            return config_err("algorithm: at least one algorithm is required");
        }
        if self.num_clients == 0 {
            return config_err("num_clients must be >= 1");
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.num_clients {
            return config_err(format!(
                "clients_per_round ({}) must lie in 1..=num_clients ({})",
                self.clients_per_round, self.num_clients
            ));
        }
        if self.stage_one_rounds == 0 || self.stage_one_rounds >= self.rounds {
            return config_err(format!(
                "stage_one_rounds ({}) must be >= 1 and < rounds ({})",
                self.stage_one_rounds, self.rounds
            ));
        }
        if self.algorithms.contains(&Algorithm::DpflBcs) && self.stage_one_rounds < 2 {
            return config_err(format!(
                "stage_one_rounds ({}) must be >= 2 for dpfl-bcs",
                self.stage_one_rounds
            ));
        }
        let positive = [
            ("clip_bound", self.clip_bound),
            ("c2", self.c2),
            ("lr_initial", self.lr_initial),
            ("lr_decay_horizon", self.lr_decay_horizon),
            ("lr_mu", self.lr_mu),
            ("dirichlet_alpha", self.dirichlet_alpha),
            ("epsilon_min", self.epsilon_min),
            ("fit_upper_bound", self.fit_upper_bound),
            ("fit_tolerance", self.fit_tolerance),
            ("fit_line_tolerance", self.fit_line_tolerance),
        ];
        for (name, v) in positive {
            if v <= 0.0 || !v.is_finite() {
                return config_err(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        let non_negative = [
            ("loss_cap", self.loss_cap),
            ("lr_gamma", self.lr_gamma),
            ("weight_decay", self.weight_decay),
            ("noise_std", self.noise_std),
            ("class_separation", self.class_separation),
            ("delta_min", self.delta_min),
        ];
        for (name, v) in non_negative {
            if v < 0.0 || !v.is_finite() {
                return config_err(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return config_err(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if self.epsilon_max < self.epsilon_min || !self.epsilon_max.is_finite() {
            return config_err(format!(
                "epsilon_max ({}) must be >= epsilon_min ({})",
                self.epsilon_max, self.epsilon_min
            ));
        }
        if !(self.delta_max >= self.delta_min && self.delta_max < 1.0) {
            return config_err(format!(
                "delta range [delta_min ({}), delta_max ({})] must satisfy delta_min <= delta_max < 1",
                self.delta_min, self.delta_max
            ));
        }
        if self.mechanism == MechanismKind::Gaussian && self.delta_min <= 0.0 {
            return config_err("delta_min must be > 0 for the gaussian mechanism");
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return config_err(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            ));
        }
        if !(self.winsorize_quantile > 0.0 && self.winsorize_quantile <= 1.0) {
            return config_err(format!(
                "winsorize_quantile must lie in (0, 1], got {}",
                self.winsorize_quantile
            ));
        }
        if self.num_seeds == 0 || self.fit_max_sweeps == 0 || self.budget_log_interval == 0 {
            return config_err("num_seeds, fit_max_sweeps and budget_log_interval must be >= 1");
        }
        match self.dataset {
            DatasetKind::SyntheticRegression | DatasetKind::SyntheticClassification => {
                if self.feature_dim == 0 {
                    return config_err("feature_dim must be >= 1");
                }
                if self.dataset == DatasetKind::SyntheticClassification && self.num_classes < 2 {
                    return config_err("num_classes must be >= 2");
                }
                let train = self.num_samples as f64 * (1.0 - self.test_fraction);
                if train < self.num_clients as f64 {
                    return config_err(format!(
                        "num_samples ({}) leaves fewer training samples than num_clients ({})",
                        self.num_samples, self.num_clients
                    ));
                }
            }
            DatasetKind::Csv => {
                if self.csv_path.is_none() {
                    return config_err("csv_path is required when dataset = csv");
                }
                if self.csv_target.is_empty() || self.csv_features.is_empty() {
                    return config_err(
                        "csv_target and csv_features are required when dataset = csv",
                    );
                }
            }
        }
        Ok(())
    }

    pub fn schedule(&self) -> LearningRateSchedule {
        match self.lr_schedule {
            ScheduleKind::Experiment => LearningRateSchedule::ExperimentDecay {
                initial: self.lr_initial,
                horizon: self.lr_decay_horizon,
            },
            ScheduleKind::Theory => LearningRateSchedule::TheoryDecay {
                mu: self.lr_mu,
                gamma: self.lr_gamma,
            },
            ScheduleKind::Constant => LearningRateSchedule::Constant {
                rate: self.lr_initial,
            },
        }
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            mechanism: self.mechanism,
            clients_per_round: self.clients_per_round,
            rounds: self.rounds,
            stage_one_rounds: self.stage_one_rounds,
            clip_bound: self.clip_bound,
            loss_cap: self.loss_cap,
            c2: self.c2,
            schedule: self.schedule(),
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            divide_by_responders: self.divide_by_responders,
            zero_noise: self.zero_noise,
            force_uniform_plan: self.force_uniform_plan,
            fit: FitSettings {
                upper_bound: self.fit_upper_bound,
                max_sweeps: self.fit_max_sweeps,
                tolerance: self.fit_tolerance,
                line_tolerance: self.fit_line_tolerance,
            },
            winsorize_quantile: self.winsorize_quantile,
            budget_log_interval: self.budget_log_interval,
        }
    }

    /// Every resolved value, in a form [`ExperimentConfig::parse`] reads back.
    pub fn snapshot(&self) -> String {
        let algorithms: Vec<String> = self.algorithms.iter().map(ToString::to_string).collect();
        let schedule = match self.lr_schedule {
            ScheduleKind::Experiment => "experiment",
            ScheduleKind::Theory => "theory",
            ScheduleKind::Constant => "constant",
        };
        let dataset = match self.dataset {
            DatasetKind::SyntheticRegression => "synthetic-regression",
            DatasetKind::SyntheticClassification => "synthetic-classification",
            DatasetKind::Csv => "csv",
        };
        let task = match self.csv_task {
            TaskKind::Regression => "regression",
            TaskKind::Classification => "classification",
        };
        let csv_path = self
            .csv_path
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        let entries: Vec<(&str, String)> = vec![
            ("algorithm", algorithms.join(",")),
            ("mechanism", self.mechanism.to_string()),
            ("num_clients", self.num_clients.to_string()),
            ("clients_per_round", self.clients_per_round.to_string()),
            ("rounds", self.rounds.to_string()),
            ("stage_one_rounds", self.stage_one_rounds.to_string()),
            ("clip_bound", self.clip_bound.to_string()),
            ("loss_cap", self.loss_cap.to_string()),
            ("c2", self.c2.to_string()),
            ("lr_schedule", schedule.to_string()),
            ("lr_initial", self.lr_initial.to_string()),
            ("lr_decay_horizon", self.lr_decay_horizon.to_string()),
            ("lr_mu", self.lr_mu.to_string()),
            ("lr_gamma", self.lr_gamma.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("dirichlet_alpha", self.dirichlet_alpha.to_string()),
            ("epsilon_min", self.epsilon_min.to_string()),
            ("epsilon_max", self.epsilon_max.to_string()),
            ("delta_min", self.delta_min.to_string()),
            ("delta_max", self.delta_max.to_string()),
            ("dataset", dataset.to_string()),
            ("num_samples", self.num_samples.to_string()),
            ("test_fraction", self.test_fraction.to_string()),
            ("feature_dim", self.feature_dim.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("noise_std", self.noise_std.to_string()),
            ("class_separation", self.class_separation.to_string()),
            ("csv_path", csv_path),
            ("csv_target", self.csv_target.clone()),
            ("csv_features", self.csv_features.join(",")),
            ("csv_task", task.to_string()),
            ("csv_standardize", self.csv_standardize.to_string()),
            ("seed", self.seed.to_string()),
            ("num_seeds", self.num_seeds.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
            (
                "divide_by_responders",
                self.divide_by_responders.to_string(),
            ),
            ("zero_noise", self.zero_noise.to_string()),
            ("force_uniform_plan", self.force_uniform_plan.to_string()),
            ("winsorize_quantile", self.winsorize_quantile.to_string()),
            ("fit_upper_bound", self.fit_upper_bound.to_string()),
            ("fit_max_sweeps", self.fit_max_sweeps.to_string()),
            ("fit_tolerance", self.fit_tolerance.to_string()),
            ("fit_line_tolerance", self.fit_line_tolerance.to_string()),
            ("budget_log_interval", self.budget_log_interval.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

// drop the variant prefix thiserror puts on nested messages
fn strip(e: Error) -> String {
    match e {
        Error::Config(m) | Error::Parameter(m) => m,
        other => other.to_string(),
    }
}
