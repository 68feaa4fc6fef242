//! Result persistence.
//!
//! Layout under the output directory:
//! - `config.json` - the resolved experiment config
//! - `metrics.csv` - `strategy,trial,step,mse_clean,mse_raw,noisy_ratio,retained,batch_ids`
//! - `summary.json` - per-step aggregates and the Welch comparisons
//! - `trials/<strategy>/trial_<k>/acquisition_log.csv` - per-candidate rows
//! - `trials/<strategy>/trial_<k>/trial_meta.json` - seed/corruption ids,
//!   per-step gate state and the serialized quality GP
//!
//! Scientific outputs stay byte-reproducible; wall-clock metadata is
//! quarantined in `run_info.json`, which is written by the CLI and never
//! read back.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acquisition::{AcquisitionRecord, Strategy};

use super::{
    ExperimentConfig, ExperimentResult, HarnessError, StepLog, StrategyAggregate, TrialResult,
    WelchComparison,
};

#[derive(Debug, Serialize, Deserialize)]
pub struct Summary {
    pub aggregates: Vec<StrategyAggregate>,
    pub welch: Vec<WelchComparison>,
}

/// Per-trial sidecar holding everything the map exporter needs besides the
/// acquisition log itself.
#[derive(Debug, Serialize, Deserialize)]
pub struct TrialMeta {
    pub strategy: Strategy,
    pub trial: usize,
    pub centers_per_side: usize,
    pub seed_ids: Vec<usize>,
    pub corrupted_ids: Vec<usize>,
    pub steps: Vec<TrialMetaStep>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrialMetaStep {
    pub step: usize,
    pub tau_used: Option<f64>,
    pub tau_relaxed: bool,
    pub skipped: bool,
    pub retained_ids: Vec<usize>,
    pub batch_ids: Vec<usize>,
    pub gp_state: Option<String>,
}

pub fn trial_dir(out: &Path, strategy: Strategy, trial: usize) -> PathBuf {
    out.join("trials")
        .join(strategy.name())
        .join(format!("trial_{trial}"))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Writes the full result tree.
pub fn write_results(result: &ExperimentResult, out: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out)?;
    std::fs::write(
        out.join("config.json"),
        serde_json::to_string_pretty(&result.config).expect("config serializes"),
    )?;

    let metrics = std::fs::File::create(out.join("metrics.csv"))?;
    let mut w = BufWriter::new(metrics);
    writeln!(
        w,
        "strategy,trial,step,mse_clean,mse_raw,noisy_ratio,retained,batch_ids"
    )?;
    for &strategy in &result.config.strategies {
        for trial in result.trials_for(strategy) {
            for m in &trial.steps {
                let ids: Vec<String> = m.batch_ids.iter().map(|i| i.to_string()).collect();
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    strategy.name(),
                    trial.trial,
                    m.step,
                    m.mse_clean,
                    m.mse_raw,
                    m.noisy_ratio,
                    m.retained_count,
                    ids.join(";")
                )?;
            }
        }
    }
    w.flush()?;

    let summary = Summary {
        aggregates: result.aggregates.clone(),
        welch: result.welch.clone(),
    };
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;

    for trial in &result.trials {
        write_trial(trial, &trial_dir(out, trial.strategy, trial.trial))?;
    }
    Ok(())
}

/// Writes one trial's acquisition log and meta sidecar.
pub fn write_trial(trial: &TrialResult, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    let n = trial.centers_per_side;
    let log = std::fs::File::create(dir.join("acquisition_log.csv"))?;
    let mut w = BufWriter::new(log);
    writeln!(w, "step,candidate_id,row,col,e_hat,d,r,s,q_hat,a,selected")?;
    for step in &trial.log {
        for r in &step.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                step.step,
                r.id,
                r.id / n,
                r.id % n,
                r.e_hat,
                r.d,
                r.r,
                r.s,
                fmt_opt(r.q_hat),
                r.a,
                u8::from(r.selected)
            )?;
        }
    }
    w.flush()?;

    let meta = TrialMeta {
        strategy: trial.strategy,
        trial: trial.trial,
        centers_per_side: n,
        seed_ids: trial.seed_ids.clone(),
        corrupted_ids: trial.corrupted_ids.clone(),
        steps: trial
            .log
            .iter()
            .zip(&trial.steps)
            .map(|(l, m)| TrialMetaStep {
                step: l.step,
                tau_used: l.tau_used,
                tau_relaxed: l.tau_relaxed,
                skipped: m.skipped,
                retained_ids: l.retained_ids.clone(),
                batch_ids: m.batch_ids.clone(),
                gp_state: l.gp_state.clone(),
            })
            .collect(),
    };
    std::fs::write(
        dir.join("trial_meta.json"),
        serde_json::to_string(&meta).expect("meta serializes"),
    )?;
    Ok(())
}

/// Reads a summary written by [`write_results`].
pub fn read_summary(out: &Path) -> Result<Summary, HarnessError> {
    let text = std::fs::read_to_string(out.join("summary.json"))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Malformed(e.to_string()))
}

/// Reads the experiment config stored next to the results.
pub fn read_config(out: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(out.join("config.json"))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Malformed(e.to_string()))
}

/// Reads one trial's meta sidecar.
pub fn read_trial_meta(dir: &Path) -> Result<TrialMeta, HarnessError> {
    let text = std::fs::read_to_string(dir.join("trial_meta.json"))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Malformed(e.to_string()))
}

/// Reads one trial's acquisition log back into per-step record lists.
pub fn read_acquisition_log(dir: &Path) -> Result<Vec<(usize, Vec<AcquisitionRecord>)>, HarnessError> {
    let text = std::fs::read_to_string(dir.join("acquisition_log.csv"))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("step,candidate_id,row,col,e_hat,d,r,s,q_hat,a,selected") => {}
        other => {
            return Err(HarnessError::Malformed(format!(
                "bad log header: {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut out: Vec<(usize, Vec<AcquisitionRecord>)> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(HarnessError::Malformed(format!(
                "line {}: expected 11 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64, HarnessError> {
            s.parse::<f64>()
                .map_err(|e| HarnessError::Malformed(format!("line {}: {e}", lineno + 2)))
        };
        let step: usize = fields[0]
            .parse()
            .map_err(|e| HarnessError::Malformed(format!("line {}: {e}", lineno + 2)))?;
        let record = AcquisitionRecord {
            id: fields[1]
                .parse()
                .map_err(|e| HarnessError::Malformed(format!("line {}: {e}", lineno + 2)))?,
            e_hat: parse(fields[4])?,
            d: parse(fields[5])?,
            r: parse(fields[6])?,
            s: parse(fields[7])?,
            q_hat: if fields[8].is_empty() {
                None
            } else {
                Some(parse(fields[8])?)
            },
            a: parse(fields[9])?,
            selected: fields[10] == "1",
        };
        match out.last_mut() {
            Some((s, v)) if *s == step => v.push(record),
            _ => out.push((step, vec![record])),
        }
    }
    Ok(out)
}

/// Rebuilds the pieces of [`StepLog`] needed by the map exporter from the
/// persisted artifacts.
pub fn reconstruct_step_log(
    meta: &TrialMeta,
    log: &[(usize, Vec<AcquisitionRecord>)],
    step: usize,
) -> Option<StepLog> {
    let meta_step = meta.steps.iter().find(|s| s.step == step)?;
    let records = log
        .iter()
        .find(|(s, _)| *s == step)
        .map(|(_, r)| r.clone())
        .unwrap_or_default();
    Some(StepLog {
        step,
        tau_used: meta_step.tau_used,
        tau_relaxed: meta_step.tau_relaxed,
        retained_ids: meta_step.retained_ids.clone(),
        records,
        gp_state: meta_step.gp_state.clone(),
    })
}
