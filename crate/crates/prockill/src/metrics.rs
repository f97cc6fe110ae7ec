//! Evaluation figures for kill-loop and offline runs.
//!
//! The time-weighted miss rate (`fnr_over_time`) is executed malicious
//! seconds over the seconds the malware would have run unkilled, with kill
//! cascades already reflected in the runtimes. Its false-positive
//! counterpart (`fpr_over_time`) is defined here as the fraction of benign
//! process-seconds destroyed by kills; the definition is an artifact
//! decision and is stated in the report header wherever it is emitted.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::telemetry::Label;

/// Per-process record of one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessOutcome {
    pub process_id: u32,
    pub app_id: u32,
    pub label: Label,
    pub birth_tick: u64,
    /// Seconds the process runs if never killed (ground-truth sidecar).
    pub unkilled_duration_s: u64,
    /// Seconds actually executed before kill or completion.
    pub runtime_s: u64,
    pub killed_at: Option<u64>,
    /// The model's decision for this process (kill-loop runs: ever killed).
    pub verdict_malicious: bool,
}

/// Executed malicious seconds over unkilled malicious seconds.
/// Returns (rate, empty-class warning).
pub fn fnr_over_time(outcomes: &[ProcessOutcome]) -> (f64, bool) {
    let mut ran = 0u64;
    let mut total = 0u64;
    for o in outcomes.iter().filter(|o| o.label.is_malicious()) {
        ran += o.runtime_s;
        total += o.unkilled_duration_s;
    }
    if total == 0 {
        return (0.0, true);
    }
    (ran as f64 / total as f64, false)
}

/// Fraction of benign processes ever killed, directly or by cascade.
pub fn fpr(outcomes: &[ProcessOutcome]) -> (f64, bool) {
    let benign: Vec<&ProcessOutcome> =
        outcomes.iter().filter(|o| !o.label.is_malicious()).collect();
    if benign.is_empty() {
        return (0.0, true);
    }
    let killed = benign.iter().filter(|o| o.verdict_malicious).count();
    (killed as f64 / benign.len() as f64, false)
}

/// Fraction of malicious processes never judged malicious.
pub fn fnr(outcomes: &[ProcessOutcome]) -> (f64, bool) {
    let malicious: Vec<&ProcessOutcome> =
        outcomes.iter().filter(|o| o.label.is_malicious()).collect();
    if malicious.is_empty() {
        return (0.0, true);
    }
    let missed = malicious.iter().filter(|o| !o.verdict_malicious).count();
    (missed as f64 / malicious.len() as f64, false)
}

/// Benign process-seconds destroyed by kills, over total benign seconds.
pub fn fpr_over_time(outcomes: &[ProcessOutcome]) -> (f64, bool) {
    let mut destroyed = 0u64;
    let mut total = 0u64;
    for o in outcomes.iter().filter(|o| !o.label.is_malicious()) {
        destroyed += o.unkilled_duration_s.saturating_sub(o.runtime_s);
        total += o.unkilled_duration_s;
    }
    if total == 0 {
        return (0.0, true);
    }
    (destroyed as f64 / total as f64, false)
}

/// Fraction of processes whose verdict matches the label.
pub fn accuracy(outcomes: &[ProcessOutcome]) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    let correct = outcomes
        .iter()
        .filter(|o| o.verdict_malicious == o.label.is_malicious())
        .count();
    correct as f64 / outcomes.len() as f64
}

/// Collapse per-process records to one record per application: runtimes and
/// unkilled durations sum over the app's processes, the kill tick is the
/// earliest one, and the app counts as judged malicious if any of its
/// processes was. Rates computed on the result weigh applications instead
/// of processes.
pub fn rollup_to_applications(outcomes: &[ProcessOutcome]) -> Vec<ProcessOutcome> {
    let mut by_app: std::collections::BTreeMap<u32, ProcessOutcome> = std::collections::BTreeMap::new();
    for o in outcomes {
        let entry = by_app.entry(o.app_id).or_insert_with(|| ProcessOutcome {
            process_id: o.app_id,
            app_id: o.app_id,
            label: o.label,
            birth_tick: o.birth_tick,
            unkilled_duration_s: 0,
            runtime_s: 0,
            killed_at: None,
            verdict_malicious: false,
        });
        entry.birth_tick = entry.birth_tick.min(o.birth_tick);
        entry.unkilled_duration_s += o.unkilled_duration_s;
        entry.runtime_s += o.runtime_s;
        entry.killed_at = match (entry.killed_at, o.killed_at) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        entry.verdict_malicious |= o.verdict_malicious;
    }
    by_app.into_values().collect()
}

/// One row of the model comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub split: String,
    pub model: String,
    pub accuracy: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub fpr_over_time: f64,
    pub fnr_over_time: f64,
    /// Exactly (fpr + fnr_over_time) / 2.
    pub combined: f64,
    /// Set when a class was empty and its rates defaulted to 0.
    pub empty_benign: bool,
    pub empty_malicious: bool,
    #[serde(skip)]
    pub detail: Vec<ProcessOutcome>,
}

impl EvaluationReport {
    pub fn compute(split: &str, model: &str, detail: Vec<ProcessOutcome>) -> Self {
        let (fpr_v, empty_benign) = fpr(&detail);
        let (fnr_v, empty_malicious) = fnr(&detail);
        let (fnr_t, _) = fnr_over_time(&detail);
        let (fpr_t, _) = fpr_over_time(&detail);
        EvaluationReport {
            split: split.to_string(),
            model: model.to_string(),
            accuracy: accuracy(&detail),
            fpr: fpr_v,
            fnr: fnr_v,
            fpr_over_time: fpr_t,
            fnr_over_time: fnr_t,
            combined: (fpr_v + fnr_t) / 2.0,
            empty_benign,
            empty_malicious,
            detail,
        }
    }
}

/// CSV with one row per (split, model).
pub fn write_report_csv(reports: &[EvaluationReport], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(
        out,
        "split,model,accuracy,fpr,fnr,fpr_over_time,fnr_over_time,combined"
    )?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.split, r.model, r.accuracy, r.fpr, r.fnr, r.fpr_over_time, r.fnr_over_time, r.combined
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Per-process detail rows as line-delimited JSON.
pub fn write_detail_jsonl(report: &EvaluationReport, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for row in &report.detail {
        serde_json::to_writer(&mut out, row)
            .map_err(|e| crate::error::Error::input(format!("serialize detail row: {e}")))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Fixed-width text table of the comparison rows.
///
/// `fpr_over_time` here is benign runtime destroyed by kills; offline rows
/// show `fnr_over_time` = 100% because a post-hoc verdict prevents nothing.
pub fn format_report_table(reports: &[EvaluationReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<6} {:<28} {:>8} {:>8} {:>8} {:>9} {:>9} {:>9}\n",
        "split", "model", "acc%", "fpr%", "fnr%", "fprT%", "fnrT%", "combined%"
    ));
    for r in reports {
        out.push_str(&format!(
            "{:<6} {:<28} {:>8.2} {:>8.2} {:>8.2} {:>9.2} {:>9.2} {:>9.2}\n",
            r.split,
            r.model,
            r.accuracy * 100.0,
            r.fpr * 100.0,
            r.fnr * 100.0,
            r.fpr_over_time * 100.0,
            r.fnr_over_time * 100.0,
            r.combined * 100.0,
        ));
    }
    out
}
