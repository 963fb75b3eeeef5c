//! Run history: in-memory form and the line-delimited JSON file format.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Algorithm;
use crate::dp::MechanismKind;
use crate::error::{Error, Result};
use crate::selection::{
    EstimatedParams, EstimationContext, LossReport, SelectionPlan, StageOneLog, StageOneRound,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub algorithm: Algorithm,
    pub mechanism: MechanismKind,
    pub seed: u64,
    pub num_clients: usize,
    pub clients_per_round: usize,
    pub rounds: usize,
    pub stage_one_rounds: usize,
    pub model_dim: usize,
    pub client_epsilon: Vec<f64>,
    pub client_delta: Vec<f64>,
    pub client_samples: Vec<usize>,
    /// Present for the biased scheme: what the offline estimator needs.
    pub estimation: Option<EstimationContext>,
}

/// What one selected client sent in a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateMeta {
    pub client: usize,
    pub noisy_norm: f64,
    pub noise_scale: f64,
    pub sensitivity: f64,
    pub epsilon_spent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    pub stage: u8,
    pub selected: Vec<usize>,
    pub test_loss: f64,
    pub test_accuracy: Option<f64>,
    /// Mean uncapped loss over all clients' training data.
    pub train_loss: f64,
    pub learning_rate: f64,
    pub updates: Vec<UpdateMeta>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss_reports: Vec<LossReport>,
    /// Participation counts `C_n` after this round.
    pub counters: Vec<u64>,
    /// Remaining epsilon per client id, recorded every few rounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_remaining: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientLedger {
    pub client: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub epsilon_consumed: f64,
    pub delta_consumed: f64,
    pub participations: u64,
    /// Round in which the epsilon budget ran out.
    pub exhausted_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_test_loss: f64,
    pub final_test_accuracy: Option<f64>,
    pub rounds_completed: usize,
    /// The candidate set ran dry before the last round.
    pub ended_early: bool,
    /// Rounds after which a new plan was computed.
    pub replan_rounds: Vec<usize>,
    pub plan_stage1: SelectionPlan,
    pub plan_stage2: Option<SelectionPlan>,
    pub estimated_params: Option<EstimatedParams>,
    pub fit_residuals: Option<Vec<f64>>,
    pub ledger: Vec<ClientLedger>,
    pub final_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HistoryLine {
    Header(RunHeader),
    Round(RoundRecord),
    Summary(RunSummary),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub header: RunHeader,
    pub rounds: Vec<RoundRecord>,
    pub summary: RunSummary,
}

/// Header plus whatever rounds were read, with the summary if the run finished.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialHistory {
    pub header: RunHeader,
    pub rounds: Vec<RoundRecord>,
    pub summary: Option<RunSummary>,
}

impl RunHistory {
    pub fn lines(&self) -> impl Iterator<Item = HistoryLine> + '_ {
        std::iter::once(HistoryLine::Header(self.header.clone()))
            .chain(self.rounds.iter().cloned().map(HistoryLine::Round))
            .chain(std::iter::once(HistoryLine::Summary(self.summary.clone())))
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for line in self.lines() {
            write_line(&mut w, &line)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let partial = read_partial(path)?;
        let summary = partial
            .summary
            .ok_or_else(|| Error::State(format!("{} has no summary record", path.display())))?;
        Ok(Self {
            header: partial.header,
            rounds: partial.rounds,
            summary,
        })
    }

    /// Test loss after each round.
    pub fn test_losses(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.test_loss).collect()
    }
}

pub fn write_line<W: Write>(w: &mut W, line: &HistoryLine) -> Result<()> {
    serde_json::to_writer(&mut *w, line)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_partial(path: &Path) -> Result<PartialHistory> {
    let reader = BufReader::new(File::open(path)?);
    let mut header = None;
    let mut rounds = Vec::new();
    let mut summary = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: HistoryLine = serde_json::from_str(&line)
            .map_err(|e| Error::State(format!("history line {}: {e}", i + 1)))?;
        match parsed {
            HistoryLine::Header(h) => header = Some(h),
            HistoryLine::Round(r) => rounds.push(r),
            HistoryLine::Summary(s) => summary = Some(s),
        }
    }
    let header =
        header.ok_or_else(|| Error::State(format!("{} has no header record", path.display())))?;
    Ok(PartialHistory {
        header,
        rounds,
        summary,
    })
}

/// Rebuild the stage-one log from round records. Fails naming the first
/// round in `1..=t0` that is absent or carries no loss reports.
pub fn stage_one_log(num_clients: usize, rounds: &[RoundRecord], t0: usize) -> Result<StageOneLog> {
    let mut log = StageOneLog::new(num_clients);
    for t in 1..=t0 {
        let r = rounds
            .iter()
            .find(|r| r.t == t)
            .ok_or_else(|| Error::State(format!("history is missing stage-one round {t}")))?;
        if r.loss_reports.is_empty() {
            return Err(Error::State(format!(
                "stage-one round {t} has no loss reports"
            )));
        }
        log.rounds.push(StageOneRound {
            t,
            selected: r.selected.clone(),
            reports: r.loss_reports.clone(),
        });
    }
    Ok(log)
}
