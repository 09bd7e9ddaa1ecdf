//! Report files under `<out>/report/`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CostSummary, EvalError, PassAtK, RegionDistribution};
use crate::genai::RepairAttempt;
use crate::signals::{Exclusion, Region, SignalSummary};

pub const REGIONS_HEADER: &str = "theta,gamma,non_consistent_pct,trivial_pct,acceptable_pct";
pub const SWEEP_HEADER: &str = "theta,gamma,bugs,selected_specs,pass_at_1,pass_at_3,pass_at_5";

/// One line of `signals.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalRow {
    pub bug_id: String,
    #[serde(flatten)]
    pub summary: SignalSummary,
    pub region: Option<Region>,
    pub selected: bool,
    pub exclusion: Option<Exclusion>,
    /// Alpha on the reference program, when a checkpoint mapping exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_ref: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub highly_consistent: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum BugStatus {
    Repaired,
    Unrepaired,
    Skipped(String),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugReport {
    pub bug_id: String,
    pub status: BugStatus,
    pub specs: usize,
    pub selected: Vec<String>,
    pub regen_attempts: usize,
    pub empty_selection: bool,
    pub samples: Option<PassAtK>,
    /// Keyed by k; absent when fewer than k samples were drawn.
    pub pass_at: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub theta: f64,
    pub gamma: f64,
    pub bugs: usize,
    pub selected_specs: usize,
    pub pass_at: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: serde_json::Value,
    pub bugs: Vec<BugReport>,
    /// Mean per-bug pass@k over bugs with at least k samples.
    pub pass_at: BTreeMap<String, f64>,
    pub cost: CostSummary,
    pub regions: Vec<RegionDistribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepRow>>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_owned(),
        source,
    }
}

fn write_file(path: &Path, body: &str) -> Result<(), EvalError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(body.as_bytes()).map_err(io_err(path))
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| serde_json::to_string(i).expect("serializable") + "\n")
        .collect()
}

fn csv_num(x: Option<&f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_default()
}

/// Writes summary.json, attempts.jsonl, signals.jsonl, regions.csv and,
/// for sweeps, sweep.csv. Output is a pure function of the inputs.
pub fn write_report(
    dir: &Path,
    report: &ExperimentReport,
    attempts: &[RepairAttempt],
    signals: &[SignalRow],
) -> Result<(), EvalError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let summary = serde_json::to_string_pretty(report).expect("serializable") + "\n";
    write_file(&dir.join("summary.json"), &summary)?;
    write_file(&dir.join("attempts.jsonl"), &jsonl(attempts))?;
    write_file(&dir.join("signals.jsonl"), &jsonl(signals))?;

    let mut regions = format!("{REGIONS_HEADER}\n");
    for d in &report.regions {
        regions.push_str(&format!(
            "{:?},{:?},{:.1},{:.1},{:.1}\n",
            d.theta,
            d.gamma,
            d.pct(Region::NonConsistent),
            d.pct(Region::Trivial),
            d.pct(Region::Acceptable)
        ));
    }
    write_file(&dir.join("regions.csv"), &regions)?;

    if let Some(rows) = &report.sweep {
        let mut csv = format!("{SWEEP_HEADER}\n");
        for r in rows {
            csv.push_str(&format!(
                "{:?},{:?},{},{},{},{},{}\n",
                r.theta,
                r.gamma,
                r.bugs,
                r.selected_specs,
                csv_num(r.pass_at.get("1")),
                csv_num(r.pass_at.get("3")),
                csv_num(r.pass_at.get("5")),
            ));
        }
        write_file(&dir.join("sweep.csv"), &csv)?;
    }
    Ok(())
}
