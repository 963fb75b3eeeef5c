use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use dpfl_core::config::ExperimentConfig;
use dpfl_core::dp::MechanismKind;
use dpfl_core::engine::{read_partial, run_observed, stage_one_log, write_line};
use dpfl_core::harness::{build_federation, run_comparison};
use dpfl_core::selection::{
    approximate_plan, compute_phi_lambda, estimate_from_log, optimal_plan, ClientMeta,
    EstimatedParams, SelectionPlan,
};

use crate::PlanArgs;

pub struct Globals {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub overrides: Vec<String>,
}

/// Which half of the exit-code contract an error falls in.
pub enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Invalid(e) | Failure::Runtime(e) => e,
        }
    }
}

type Outcome = Result<(), Failure>;

trait Classify<T> {
    fn invalid(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Invalid(e.into()))
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn resolve_config(globals: &Globals, path: Option<&Path>) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    for o in &globals.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = globals.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &globals.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(globals: &Globals) -> PathBuf {
    globals.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn run(globals: &Globals, config: Option<&Path>) -> Outcome {
    let cfg = resolve_config(globals, config).invalid()?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out)
        .with_context(|| format!("creating {}", out.display()))
        .runtime()?;
    fs::write(out.join("config.snapshot"), cfg.snapshot()).runtime()?;

    if cfg.algorithms.len() == 1 && cfg.num_seeds == 1 {
        let federation = build_federation(&cfg, cfg.seed).invalid()?;
        let path = out.join("history.jsonl");
        let mut writer = BufWriter::new(File::create(&path).runtime()?);
        let result = run_observed(
            cfg.algorithms[0],
            &cfg.training_config(),
            &federation,
            cfg.seed,
            &mut |line| {
                write_line(&mut writer, line)?;
                writer.flush()?;
                Ok(())
            },
        );
        let history = match result {
            Ok(h) => h,
            Err(e) => {
                let _ = writer.flush();
                let err = anyhow!(e).context(format!("partial history kept at {}", path.display()));
                return Err(match err.downcast_ref::<dpfl_core::Error>() {
                    Some(dpfl_core::Error::Parameter(_)) | Some(dpfl_core::Error::Config(_)) => {
                        Failure::Invalid(err)
                    }
                    _ => Failure::Runtime(err),
                });
            }
        };
        write_json(&out.join("summary.json"), &history.summary).runtime()?;
        println!(
            "{}: final test loss {:.6}{} after {} rounds; artifacts in {}",
            cfg.algorithms[0],
            history.summary.final_test_loss,
            history
                .summary
                .final_test_accuracy
                .map(|a| format!(", accuracy {a:.4}"))
                .unwrap_or_default(),
            history.summary.rounds_completed,
            out.display()
        );
    } else {
        let comparison = run_comparison(&cfg, &cfg.algorithms, cfg.num_seeds).runtime()?;
        comparison.persist(&out).runtime()?;
        for r in &comparison.rows {
            println!(
                "{},{},{},{},{}",
                r.algorithm, r.mechanism, r.mean_final_metric, r.std_final_metric, r.num_seeds
            );
        }
    }
    Ok(())
}

fn read_roster(path: &Path) -> anyhow::Result<Vec<ClientMeta>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let expected = ["client_id", "epsilon", "delta", "num_samples"];
    if headers.iter().collect::<Vec<_>>() != expected {
        bail!(
            "{}: header must be `{}`",
            path.display(),
            expected.join(",")
        );
    }
    let mut clients = Vec::new();
    let mut bad = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let parsed = record.ok().and_then(|r| {
            if r.len() != 4 {
                return None;
            }
            Some(ClientMeta {
                client_id: r[0].parse().ok()?,
                epsilon: r[1].parse().ok()?,
                delta: r[2].parse().ok()?,
                num_samples: r[3].parse().ok()?,
            })
        });
        match parsed {
            Some(c) if c.epsilon > 0.0 && c.epsilon.is_finite() && c.num_samples > 0 && (0.0..1.0).contains(&c.delta) => {
                clients.push(c)
            }
            Some(c) => bad.push(format!(
                "line {line}: epsilon must be > 0, delta in [0, 1) and num_samples >= 1 (client {})",
                c.client_id
            )),
            None => bad.push(format!("line {line}: malformed row")),
        }
    }
    if !bad.is_empty() {
        bail!("{}:\n  {}", path.display(), bad.join("\n  "));
    }
    if clients.is_empty() {
        bail!("{}: roster has no clients", path.display());
    }
    Ok(clients)
}

fn read_gamma(path: &Path, roster: &[ClientMeta]) -> anyhow::Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut values = vec![None; roster.len()];
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let (Some(id), Some(g)) = (
            record.get(0).and_then(|s| s.parse::<usize>().ok()),
            record.get(1).and_then(|s| s.parse::<f64>().ok()),
        ) else {
            bail!("{}: line {line}: malformed row", path.display());
        };
        if g < 0.0 || !g.is_finite() {
            bail!(
                "{}: line {line}: gamma must be finite and >= 0",
                path.display()
            );
        }
        let Some(pos) = roster.iter().position(|c| c.client_id == id) else {
            bail!(
                "{}: line {line}: client {id} is not in the roster",
                path.display()
            );
        };
        values[pos] = Some(g);
    }
    values
        .into_iter()
        .zip(roster)
        .map(|(v, c)| {
            v.ok_or_else(|| anyhow!("{}: no gamma for client {}", path.display(), c.client_id))
        })
        .collect()
}

fn write_plan(path: &Path, roster: &[ClientMeta], plan: &SelectionPlan) -> anyhow::Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["client_id", "T_n", "p_n"])?;
    for (c, (t, p)) in roster
        .iter()
        .zip(plan.counts.iter().zip(&plan.probabilities))
    {
        w.write_record([c.client_id.to_string(), t.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn plan(globals: &Globals, args: &PlanArgs) -> Outcome {
    let mechanism: MechanismKind = args.mechanism.parse().invalid()?;
    if args.k == 0 || args.rounds == 0 {
        return Err(Failure::Invalid(anyhow!("--k and --rounds must be >= 1")));
    }
    let mut roster = read_roster(&args.roster).invalid()?;
    if mechanism == MechanismKind::Laplace {
        roster.iter_mut().for_each(|c| c.delta = 0.0);
    }
    let (lambda, phi) =
        compute_phi_lambda(mechanism, args.model_dim, args.clip_bound, args.c2, &roster)
            .invalid()?;
    let z = mechanism.exponent();
    let plan = match &args.gamma {
        None => approximate_plan(&phi, args.k, args.rounds, z).runtime()?,
        Some(path) => {
            let gamma_n = read_gamma(path, &roster).invalid()?;
            let params = EstimatedParams {
                gamma_hat_n: gamma_n,
                rho_min_hat: 1.0,
                lambda,
                phi_n: phi,
                gamma: args.lr_gamma,
                l_smooth: args.l_smooth,
                mu_convex: args.mu,
                sigma_sq: 0.0,
                init_dist_sq: 0.0,
                omega_a: 0.0,
                omega_b: 0.0,
            };
            if !(args.l_smooth > args.mu && args.mu > 0.0) {
                return Err(Failure::Invalid(anyhow!("need --l-smooth > --mu > 0")));
            }
            optimal_plan(&params, args.rounds, args.k, z).invalid()?
        }
    };
    let out = match &args.output {
        Some(p) => p.clone(),
        None => {
            let dir = output_dir(globals);
            fs::create_dir_all(&dir).runtime()?;
            dir.join("plan.csv")
        }
    };
    write_plan(&out, &roster, &plan).runtime()?;
    println!(
        "wrote {} ({} clients, {} slots)",
        out.display(),
        roster.len(),
        plan.total()
    );
    Ok(())
}

pub fn estimate(globals: &Globals, history: &Path, output: Option<&Path>) -> Outcome {
    let partial = read_partial(history)
        .with_context(|| format!("reading {}", history.display()))
        .invalid()?;
    let ctx = partial
        .header
        .estimation
        .clone()
        .ok_or_else(|| anyhow!("{} was not recorded by a dpfl-bcs run", history.display()))
        .invalid()?;
    let log = stage_one_log(
        partial.header.num_clients,
        &partial.rounds,
        ctx.stage_one_rounds,
    )
    .invalid()?;
    let (params, trace) = estimate_from_log(&log, &ctx).runtime()?;
    let out = match output {
        Some(p) => p.to_path_buf(),
        None => {
            let dir = output_dir(globals);
            fs::create_dir_all(&dir).runtime()?;
            dir.join("estimated_params.json")
        }
    };
    write_json(&out, &params).runtime()?;
    println!(
        "wrote {} (fit residual {:.3e} after {} sweeps)",
        out.display(),
        trace.final_residual(),
        trace.sweeps()
    );
    Ok(())
}

pub fn partition(globals: &Globals, config: Option<&Path>) -> Outcome {
    let cfg = resolve_config(globals, config).invalid()?;
    let federation = build_federation(&cfg, cfg.seed).invalid()?;
    fs::create_dir_all(&cfg.output_dir).runtime()?;
    let path = cfg.output_dir.join("partition.csv");
    let mut w = csv::Writer::from_path(&path).runtime()?;
    w.write_record(["client_id", "num_samples", "epsilon", "delta"])
        .runtime()?;
    println!("client_id,num_samples,epsilon,delta");
    for c in &federation.clients {
        let row = [
            c.id.to_string(),
            c.data.len().to_string(),
            c.budget.epsilon.to_string(),
            c.budget.delta.to_string(),
        ];
        println!("{}", row.join(","));
        w.write_record(&row).runtime()?;
    }
    w.flush().runtime()?;
    Ok(())
}
