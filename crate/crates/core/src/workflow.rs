//! Per-bug orchestration over an artifact directory.
//!
//! Layout under `<out>/<bug_id>/`:
//! - `partition.json`: baseline verdicts, outputs and the P/F split
//! - `plan.json`, `signals.jsonl`, `selected.json`, `validation.json`
//! - `attempts.jsonl`
//! - `prompts/<label>.json` when prompt dumping is on
//!
//! Every step reads what earlier steps wrote, and recomputes it when absent,
//! so subcommands can be rerun in any order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::config::{RepairMode, RunConfig};
use crate::corpus::{partition_tests, BugInstance, CorpusError, TestPartition, Verdict};
use crate::evaluation::{
    cost_summary, region_distribution, sample_counts, write_report, BugReport, BugStatus, CostItem,
    EvalError, ExperimentReport, SignalRow, SweepRow, REPORTED_K,
};
use crate::executor::{
    collect_traces, records_for_plan, run_suite, ExecError, ProgramRole, Sandbox, TestRun,
    TraceCollector, TraceTarget,
};
use crate::genai::{
    generate_repairs, iterative_refine, regenerate_until_nontrivial, validate_plan, Completion,
    GenaiError, Guidance, ModelClient, PriceTable, Prompt, RepairAttempt, RepairSession, UsageCost,
    Validation,
};
use crate::signals::{
    classify_region, compute_alpha, delta_alpha_for, sweep_grid, Fraction, SelectionPolicy,
    Thresholds,
};
use crate::trace::{ProbePlan, TraceError};

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Genai(#[from] GenaiError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid plan: {0}")]
    Plan(#[from] TraceError),
    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error("unknown bug `{0}`")]
    UnknownBug(String),
    #[error("no repair attempts found under {0}")]
    NoAttempts(PathBuf),
}

fn fraction_to_f64(f: Fraction) -> f64 {
    *f.numer() as f64 / *f.denom() as f64
}

fn artifact_err(path: &Path, e: impl std::fmt::Display) -> WorkflowError {
    WorkflowError::Artifact {
        path: path.to_owned(),
        message: e.to_string(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), WorkflowError> {
    let body = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    fs::write(path, body).map_err(|e| artifact_err(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), WorkflowError> {
    let body: String = items
        .iter()
        .map(|i| serde_json::to_string(i).expect("serializable") + "\n")
        .collect();
    fs::write(path, body).map_err(|e| artifact_err(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Option<T>, WorkflowError> {
    match fs::read_to_string(path) {
        Ok(raw) => serde_json::from_str(&raw)
            .map(Some)
            .map_err(|e| artifact_err(path, e)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(artifact_err(path, e)),
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Option<Vec<T>>, WorkflowError> {
    match fs::read_to_string(path) {
        Ok(raw) => raw
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| artifact_err(path, e)))
            .collect::<Result<Vec<_>, _>>()
            .map(Some),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(artifact_err(path, e)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    #[serde(flatten)]
    pub verdict: Verdict,
    pub exit_code: Option<i32>,
    pub stdout: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionArtifact {
    pub bug_id: String,
    pub tests: BTreeMap<String, TestOutcome>,
    pub partition: TestPartition,
}

impl PartitionArtifact {
    fn baseline(&self) -> BTreeMap<String, TestRun> {
        self.tests
            .iter()
            .map(|(id, o)| {
                let run = TestRun {
                    test_id: id.clone(),
                    verdict: o.verdict,
                    stdout: o.stdout.clone().into_bytes(),
                    stderr: Vec::new(),
                    exit_code: o.exit_code,
                };
                (id.clone(), run)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    Generated,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationArtifact {
    pub bug_id: String,
    pub plan_source: PlanSource,
    pub regen_attempts: usize,
    /// Regeneration ran out of budget with an empty refined set.
    pub empty_selection: bool,
    pub warnings: Vec<String>,
    pub usage: Option<UsageCost>,
    pub guidance: Guidance,
    pub specs: usize,
    /// Filters the refined set was selected with.
    pub policy: SelectionPolicy,
}

/// Stand-in used when no model client is configured.
struct NoClient;

impl ModelClient for NoClient {
    fn identity(&self) -> &str {
        "none"
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn complete(&self, _prompt: &Prompt) -> Result<Completion, GenaiError> {
        Err(GenaiError::Config("no model client configured".into()))
    }
}

/// Result of one bug's pipeline step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BugResult {
    pub bug_id: String,
    pub status: BugStatus,
}

impl BugResult {
    pub fn failed(&self) -> bool {
        matches!(self.status, BugStatus::Failed(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Partition,
    Validate,
    Repair,
}

enum Progress {
    Done(BugStatus),
    Skip(String),
}

pub struct Workflow<'a> {
    pub config: RunConfig,
    pub out: PathBuf,
    pub sandbox: Sandbox,
    pub collector: &'a dyn TraceCollector,
    pub client: Option<&'a dyn ModelClient>,
    pub prices: PriceTable,
    pub prompt_dump: bool,
    /// User-supplied plan used instead of the generator.
    pub plan_override: Option<ProbePlan>,
}

impl<'a> Workflow<'a> {
    pub fn new(
        config: RunConfig,
        out: impl Into<PathBuf>,
        collector: &'a dyn TraceCollector,
    ) -> Self {
        let sandbox = Sandbox::python(config.limits());
        Self {
            config,
            out: out.into(),
            sandbox,
            collector,
            client: None,
            prices: PriceTable::default(),
            prompt_dump: false,
            plan_override: None,
        }
    }

    pub fn bug_dir(&self, bug_id: &str) -> PathBuf {
        self.out.join(bug_id)
    }

    fn client(&self) -> &dyn ModelClient {
        self.client.unwrap_or(&NoClient)
    }

    /// Runs `step` (and whatever it depends on) for every bug, `jobs` bugs
    /// at a time. Results come back in bug order.
    pub fn run(&self, bugs: &[BugInstance], step: Step) -> Result<Vec<BugResult>, WorkflowError> {
        let needs_model = match step {
            Step::Partition => false,
            Step::Validate => self.plan_override.is_none(),
            Step::Repair => true,
        };
        if needs_model {
            let client = self
                .client
                .ok_or_else(|| GenaiError::Config("this step needs a model client".into()))?;
            self.prices.price(client.identity())?;
        }
        fs::create_dir_all(&self.out).map_err(|e| artifact_err(&self.out, e))?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.jobs.max(1))
            .build()
            .map_err(|e| ExecError::Limits(e.to_string()))?;
        use rayon::prelude::*;
        Ok(pool.install(|| {
            bugs.par_iter()
                .map(|bug| {
                    let status = match self.run_bug(bug, step) {
                        Ok(Progress::Done(s)) => s,
                        Ok(Progress::Skip(reason)) => {
                            info!(bug = %bug.id, "skipped: {reason}");
                            BugStatus::Skipped(reason)
                        }
                        Err(e) => {
                            warn!(bug = %bug.id, error = %e, "bug failed");
                            BugStatus::Failed(e.to_string())
                        }
                    };
                    BugResult {
                        bug_id: bug.id.clone(),
                        status,
                    }
                })
                .collect()
        }))
    }

    fn run_bug(&self, bug: &BugInstance, step: Step) -> Result<Progress, WorkflowError> {
        let dir = self.bug_dir(&bug.id);
        fs::create_dir_all(&dir).map_err(|e| artifact_err(&dir, e))?;
        let part = if step == Step::Partition {
            self.partition(bug)?
        } else {
            self.load_or_partition(bug)?
        };
        if part.partition.failing.is_empty() {
            return Ok(Progress::Skip("no failing tests".into()));
        }
        if step == Step::Partition {
            return Ok(Progress::Done(BugStatus::Unrepaired));
        }
        let baseline = part.baseline();
        let session = RepairSession::new(
            bug,
            &part.partition,
            &baseline,
            &self.sandbox,
            self.collector,
            self.client(),
            &self.prices,
        );
        let validation = match step {
            Step::Validate => self.validate(&session)?,
            _ => match read_json::<ValidationArtifact>(&dir.join("validation.json"))? {
                Some(v) if v.policy == self.config.selection_policy() => v,
                _ => self.validate(&session)?,
            },
        };
        if step == Step::Validate {
            self.dump_prompts(&session)?;
            return Ok(Progress::Done(BugStatus::Unrepaired));
        }

        let attempts = match self.config.mode {
            RepairMode::Pure => {
                generate_repairs(&session, &validation.guidance, self.config.n_samples)?
            }
            RepairMode::Refine => {
                let mut all = Vec::new();
                for chain in 0..self.config.n_samples {
                    let next = all.len();
                    all.extend(iterative_refine(
                        &session,
                        &validation.guidance,
                        self.config.max_refine_iterations,
                        chain,
                        next,
                    )?);
                }
                all
            }
        };
        write_jsonl(&dir.join("attempts.jsonl"), &attempts)?;
        self.dump_prompts(&session)?;
        let repaired = attempts.iter().any(|a| a.passed_all);
        Ok(Progress::Done(if repaired {
            BugStatus::Repaired
        } else {
            BugStatus::Unrepaired
        }))
    }

    /// Baseline runs of the original program and the resulting P/F split.
    pub fn partition(&self, bug: &BugInstance) -> Result<PartitionArtifact, WorkflowError> {
        let runs = run_suite(&bug.program_source, &bug.tests, &self.sandbox)?;
        let verdicts: BTreeMap<String, Verdict> =
            runs.iter().map(|(id, r)| (id.clone(), r.verdict)).collect();
        let partition = partition_tests(&bug.tests, &verdicts)?;
        let artifact = PartitionArtifact {
            bug_id: bug.id.clone(),
            tests: runs
                .into_iter()
                .map(|(id, r)| {
                    let o = TestOutcome {
                        verdict: r.verdict,
                        exit_code: r.exit_code,
                        stdout: String::from_utf8_lossy(&r.stdout).into_owned(),
                    };
                    (id, o)
                })
                .collect(),
            partition,
        };
        info!(
            bug = %bug.id,
            passing = artifact.partition.passing.len(),
            failing = artifact.partition.failing.len(),
            "partitioned"
        );
        write_json(&self.bug_dir(&bug.id).join("partition.json"), &artifact)?;
        Ok(artifact)
    }

    fn load_or_partition(&self, bug: &BugInstance) -> Result<PartitionArtifact, WorkflowError> {
        let path = self.bug_dir(&bug.id).join("partition.json");
        match read_json::<PartitionArtifact>(&path)? {
            Some(p) if p.tests.len() == bug.tests.len() => Ok(p),
            _ => self.partition(bug),
        }
    }

    fn validate(&self, session: &RepairSession<'_>) -> Result<ValidationArtifact, WorkflowError> {
        let bug = session.bug;
        let policy = self.config.selection_policy();
        let (validation, source, regen_attempts, empty, warnings, usage) = match &self.plan_override
        {
            Some(plan) => {
                plan.check(bug.program_source.lines().count())?;
                let v = validate_plan(session, plan, &policy)?;
                let empty = v.selected.is_empty();
                (v, PlanSource::User, 0, empty, Vec::new(), None)
            }
            None => {
                let r = regenerate_until_nontrivial(session, &policy, self.config.regen_attempts)?;
                let usage = self.prices.cost(self.client().identity(), r.usage)?;
                (
                    r.validation,
                    PlanSource::Generated,
                    r.attempts,
                    r.flagged_empty,
                    r.warnings,
                    Some(usage),
                )
            }
        };
        if empty {
            warn!(bug = %bug.id, "refined set is empty, repair will be unguided");
        }
        let dir = self.bug_dir(&bug.id);
        let rows = self.signal_rows(bug, &validation);
        write_json(&dir.join("plan.json"), &validation.plan)?;
        write_jsonl(&dir.join("signals.jsonl"), &rows)?;
        write_json(&dir.join("selected.json"), &validation.selected)?;
        let artifact = ValidationArtifact {
            bug_id: bug.id.clone(),
            plan_source: source,
            regen_attempts,
            empty_selection: empty,
            warnings,
            usage,
            guidance: Guidance::from_validation(&validation, session.partition, regen_attempts > 1),
            specs: validation.plan.specs.len(),
            policy,
        };
        write_json(&dir.join("validation.json"), &artifact)?;
        Ok(artifact)
    }

    /// Signal rows with region, selection verdict and, when the bug has a
    /// mapped reference program, alpha on the reference.
    fn signal_rows(&self, bug: &BugInstance, v: &Validation) -> Vec<SignalRow> {
        let thresholds = self.config.thresholds;
        let policy = self.config.selection_policy();
        let selected: BTreeSet<&String> = v.selected.iter().collect();
        let deltas = match self.reference_alpha(bug, v) {
            Ok(d) => d,
            Err(e) => {
                warn!(bug = %bug.id, error = %e, "reference alpha unavailable");
                BTreeMap::new()
            }
        };
        v.summaries
            .iter()
            .map(|s| {
                let (alpha_ref, delta_alpha, highly_consistent) = match deltas.get(&s.spec_id) {
                    Some(Some((r, d))) => (Some(*r), Some(d.as_f64()), Some(d.highly_consistent)),
                    _ => (None, None, None),
                };
                SignalRow {
                    bug_id: bug.id.clone(),
                    summary: s.clone(),
                    region: classify_region(s, thresholds).ok(),
                    selected: selected.contains(&s.spec_id),
                    exclusion: policy.judge(s).err(),
                    alpha_ref,
                    delta_alpha,
                    highly_consistent,
                }
            })
            .collect()
    }

    #[allow(clippy::type_complexity)]
    fn reference_alpha(
        &self,
        bug: &BugInstance,
        v: &Validation,
    ) -> Result<BTreeMap<String, Option<(f64, crate::signals::DeltaAlpha)>>, WorkflowError> {
        let (Some(reference), Some(mapping)) = (&bug.reference_source, &bug.checkpoint_mapping)
        else {
            return Ok(BTreeMap::new());
        };
        let mapped_ids: BTreeSet<String> = v
            .plan
            .specs
            .iter()
            .filter(|s| mapping.iter().any(|m| m.checkpoint_id == s.checkpoint))
            .map(|s| s.id.clone())
            .collect();
        let plan = v.plan.restricted_to(&mapped_ids).mapped(mapping)?;
        let tests: Vec<_> = bug.tests.iter().collect();
        let ids: Vec<&str> = bug.tests.iter().map(|t| t.id.as_str()).collect();
        let target = TraceTarget {
            bug,
            role: ProgramRole::Reference,
            source: reference,
        };
        let events = collect_traces(self.collector, &target, &tests, &plan)?;
        let records = records_for_plan(&plan, &ids, &events)?;
        let mapped: Vec<_> = v
            .summaries
            .iter()
            .filter(|s| mapped_ids.contains(&s.spec_id))
            .cloned()
            .collect();
        Ok(delta_alpha_for(&mapped, &records)
            .into_iter()
            .map(|(id, d)| {
                let alpha_ref = compute_alpha(&records, &id).map(fraction_to_f64);
                let value = d.ok().zip(alpha_ref).map(|(d, r)| (r, d));
                (id, value)
            })
            .collect())
    }

    fn dump_prompts(&self, session: &RepairSession<'_>) -> Result<(), WorkflowError> {
        let prompts = session.take_prompts();
        if !self.prompt_dump || prompts.is_empty() {
            return Ok(());
        }
        let dir = self.bug_dir(&session.bug.id).join("prompts");
        fs::create_dir_all(&dir).map_err(|e| artifact_err(&dir, e))?;
        for p in &prompts {
            write_json(&dir.join(format!("{}.json", p.label)), p)?;
        }
        Ok(())
    }
}

/// Bug ids in the filter that the corpus does not contain.
pub fn select_bugs(
    bugs: Vec<BugInstance>,
    wanted: &[String],
) -> (Vec<BugInstance>, Vec<BugResult>) {
    if wanted.is_empty() {
        return (bugs, Vec::new());
    }
    let known: BTreeSet<&str> = bugs.iter().map(|b| b.id.as_str()).collect();
    let missing = wanted
        .iter()
        .filter(|w| !known.contains(w.as_str()))
        .map(|w| BugResult {
            bug_id: w.clone(),
            status: BugStatus::Failed(WorkflowError::UnknownBug(w.clone()).to_string()),
        })
        .collect();
    let kept = bugs
        .into_iter()
        .filter(|b| wanted.contains(&b.id))
        .collect();
    (kept, missing)
}

/// Subdirectory holding one grid point of a threshold sweep.
pub fn sweep_dir(out: &Path, t: Thresholds) -> PathBuf {
    out.join("sweep")
        .join(format!("theta_{}_gamma_{}", t.theta, t.gamma))
}

fn bug_dirs(out: &Path) -> Result<Vec<PathBuf>, WorkflowError> {
    let entries = match fs::read_dir(out) {
        Ok(e) => e,
        Err(e) => return Err(artifact_err(out, e)),
    };
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("partition.json").is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

struct Collected {
    bugs: Vec<BugReport>,
    attempts: Vec<RepairAttempt>,
    signals: Vec<SignalRow>,
    costs: Vec<CostItem>,
}

fn collect_dir(out: &Path) -> Result<Collected, WorkflowError> {
    let mut c = Collected {
        bugs: Vec::new(),
        attempts: Vec::new(),
        signals: Vec::new(),
        costs: Vec::new(),
    };
    for dir in bug_dirs(out)? {
        let part: PartitionArtifact =
            read_json(&dir.join("partition.json"))?.expect("listed by bug_dirs");
        let validation: Option<ValidationArtifact> = read_json(&dir.join("validation.json"))?;
        let signals: Vec<SignalRow> = read_jsonl(&dir.join("signals.jsonl"))?.unwrap_or_default();
        let mut attempts: Vec<RepairAttempt> =
            read_jsonl(&dir.join("attempts.jsonl"))?.unwrap_or_default();
        attempts.sort_by_key(|a| a.attempt_index);

        let samples = sample_counts(&attempts).remove(&part.bug_id);
        let pass_at = samples
            .map(|s| {
                REPORTED_K
                    .iter()
                    .filter_map(|k| s.at(*k).map(|v| (k.to_string(), v)))
                    .collect()
            })
            .unwrap_or_default();
        let status = if part.partition.failing.is_empty() {
            BugStatus::Skipped("no failing tests".into())
        } else if attempts.iter().any(|a| a.passed_all) {
            BugStatus::Repaired
        } else {
            BugStatus::Unrepaired
        };
        if let Some(u) = validation.as_ref().and_then(|v| v.usage.clone()) {
            c.costs.push(CostItem {
                bug_id: part.bug_id.clone(),
                usage: u,
            });
        }
        c.costs.extend(attempts.iter().map(|a| CostItem {
            bug_id: a.bug_id.clone(),
            usage: a.usage.clone(),
        }));
        c.bugs.push(BugReport {
            bug_id: part.bug_id.clone(),
            status,
            specs: validation.as_ref().map_or(0, |v| v.specs),
            selected: signals
                .iter()
                .filter(|r| r.selected)
                .map(|r| r.summary.spec_id.clone())
                .collect(),
            regen_attempts: validation.as_ref().map_or(0, |v| v.regen_attempts),
            empty_selection: validation.as_ref().is_some_and(|v| v.empty_selection),
            samples,
            pass_at,
        });
        c.attempts.extend(attempts);
        c.signals.extend(signals);
    }
    Ok(c)
}

fn mean_pass_at(bugs: &[BugReport]) -> BTreeMap<String, f64> {
    REPORTED_K
        .iter()
        .filter_map(|k| {
            let key = k.to_string();
            let vals: Vec<f64> = bugs
                .iter()
                .filter_map(|b| b.pass_at.get(&key).copied())
                .collect();
            (!vals.is_empty()).then(|| (key, vals.iter().sum::<f64>() / vals.len() as f64))
        })
        .collect()
}

/// Config fields that influence results. Parallelism is left out so runs
/// with different `--jobs` produce the same summary.
fn config_snapshot(config: &RunConfig) -> serde_json::Value {
    let mut v = serde_json::to_value(config).expect("serializable");
    if let Some(map) = v.as_object_mut() {
        map.remove("jobs");
    }
    v
}

/// Aggregates `<out>` into `<out>/report/`. With `sweep`, also reads the
/// grid-point runs under `<out>/sweep/` and emits one regions row per grid
/// point.
pub fn build_report(
    config: &RunConfig,
    out: &Path,
    prices: &PriceTable,
    sweep: bool,
) -> Result<ExperimentReport, WorkflowError> {
    let c = collect_dir(out)?;
    if c.attempts.is_empty() {
        return Err(WorkflowError::NoAttempts(out.to_owned()));
    }
    let summaries: Vec<_> = c.signals.iter().map(|r| r.summary.clone()).collect();
    let grid = if sweep {
        sweep_grid()
    } else {
        vec![config.thresholds]
    };
    let regions = if summaries.is_empty() {
        Vec::new()
    } else {
        grid.iter()
            .map(|t| region_distribution(&summaries, *t))
            .collect::<Result<Vec<_>, _>>()
            .or_else(|e| match e {
                EvalError::Empty(_) => Ok(Vec::new()),
                other => Err(other),
            })?
    };

    let sweep_rows = if sweep {
        let mut rows = Vec::new();
        for t in sweep_grid() {
            let dir = sweep_dir(out, t);
            if !dir.is_dir() {
                continue;
            }
            let g = collect_dir(&dir)?;
            rows.push(SweepRow {
                theta: t.theta.as_f64(),
                gamma: t.gamma.as_f64(),
                bugs: g.bugs.iter().filter(|b| b.samples.is_some()).count(),
                selected_specs: g.bugs.iter().map(|b| b.selected.len()).sum(),
                pass_at: mean_pass_at(&g.bugs),
            });
        }
        Some(rows)
    } else {
        None
    };

    let report = ExperimentReport {
        config: config_snapshot(config),
        pass_at: mean_pass_at(&c.bugs),
        cost: cost_summary(&c.costs, prices)?,
        regions,
        sweep: sweep_rows,
        bugs: c.bugs,
    };
    write_report(&out.join("report"), &report, &c.attempts, &c.signals)?;
    Ok(report)
}
