//! Spec generation with regeneration, validation against P/F executions,
//! and the guided repair loops.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use tracing::{debug, info, warn};

use super::client::{
    with_retries, ModelClient, PatchProposal, PriceTable, Prompt, SpecProposal, Usage, UsageCost,
};
use super::prompt::{excerpt, refine_prompt, repair_prompt, spec_prompt};
use super::{GenaiError, CLIENT_RETRIES};
use crate::corpus::{normalize_output, BugInstance, TestCase, TestPartition, Verdict};
use crate::executor::{
    collect_traces, records_for_plan, run_suite, ProgramRole, Sandbox, SatisfactionRecord, TestRun,
    TraceCollector, TraceTarget,
};
use crate::signals::{summarize, Exclusion, SelectionPolicy, SignalSummary};
use crate::trace::ProbePlan;

/// How many failing tests are quoted back in a refinement turn.
const FEEDBACK_TESTS: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoggedPrompt {
    pub label: String,
    pub prompt: Prompt,
    pub response: String,
}

/// Everything one bug's pipeline needs. Not shared across bugs.
pub struct RepairSession<'a> {
    pub bug: &'a BugInstance,
    pub partition: &'a TestPartition,
    /// Uninstrumented runs of the original program, keyed by test id.
    pub baseline: &'a BTreeMap<String, TestRun>,
    pub sandbox: &'a Sandbox,
    pub collector: &'a dyn TraceCollector,
    pub client: &'a dyn ModelClient,
    pub prices: &'a PriceTable,
    prompts: RefCell<Vec<LoggedPrompt>>,
}

impl<'a> RepairSession<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        bug: &'a BugInstance,
        partition: &'a TestPartition,
        baseline: &'a BTreeMap<String, TestRun>,
        sandbox: &'a Sandbox,
        collector: &'a dyn TraceCollector,
        client: &'a dyn ModelClient,
        prices: &'a PriceTable,
    ) -> Self {
        Self {
            bug,
            partition,
            baseline,
            sandbox,
            collector,
            client,
            prices,
            prompts: RefCell::new(Vec::new()),
        }
    }

    pub fn take_prompts(&self) -> Vec<LoggedPrompt> {
        self.prompts.take()
    }

    fn log(&self, label: String, prompt: &Prompt, response: &str) {
        self.prompts.borrow_mut().push(LoggedPrompt {
            label,
            prompt: prompt.clone(),
            response: response.to_owned(),
        });
    }

    fn ask_specs(&self, label: String, prompt: &Prompt) -> Result<SpecProposal, GenaiError> {
        let p = with_retries(CLIENT_RETRIES, || self.client.generate_specs(prompt))?;
        self.log(label, prompt, &p.raw);
        Ok(p)
    }

    fn ask_patch(&self, label: String, prompt: &Prompt) -> Result<PatchProposal, GenaiError> {
        let p = with_retries(CLIENT_RETRIES, || self.client.generate_patch(prompt))?;
        self.log(label, prompt, &p.raw);
        Ok(p)
    }

    fn cost(&self, usage: Usage) -> Result<UsageCost, GenaiError> {
        self.prices.cost(self.client.identity(), usage)
    }

    fn program_lines(&self) -> usize {
        self.bug.program_source.lines().count()
    }

    fn test_ids(&self) -> Vec<&str> {
        self.bug.tests.iter().map(|t| t.id.as_str()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedPlan {
    pub plan: ProbePlan,
    pub warnings: Vec<String>,
    pub usage: Usage,
}

/// Asks the generator for checkpoints and postconditions, using one failing
/// test as context. Malformed entries are dropped with warnings.
pub fn generate_checkpoints_and_specs(
    session: &RepairSession<'_>,
    failing: &TestCase,
    attempt_note: &str,
) -> Result<GeneratedPlan, GenaiError> {
    if !session.partition.failing.contains(&failing.id) {
        return Err(GenaiError::Config(format!(
            "test `{}` is not a failing test of `{}`",
            failing.id, session.bug.id
        )));
    }
    let run = session
        .baseline
        .get(&failing.id)
        .ok_or_else(|| GenaiError::Config(format!("no baseline run for test `{}`", failing.id)))?;
    let prompt = spec_prompt(session.bug, failing, run, attempt_note);
    let label = format!("specs_{:03}", session.prompts.borrow().len());
    let proposal = session.ask_specs(label, &prompt)?;
    let (plan, dropped) = proposal.plan.sanitize(session.program_lines());
    let mut warnings = proposal.warnings;
    warnings.extend(dropped.into_iter().map(|e| e.to_string()));
    for w in &warnings {
        warn!(bug = %session.bug.id, "{w}");
    }
    Ok(GeneratedPlan {
        plan,
        warnings,
        usage: proposal.usage,
    })
}

/// Signals for one plan on the original program.
#[derive(Debug, Clone)]
pub struct Validation {
    pub plan: ProbePlan,
    /// One record per (spec, test) over the whole suite.
    pub records: Vec<SatisfactionRecord>,
    pub summaries: Vec<SignalSummary>,
    /// Refined set, ordered by (checkpoint, spec).
    pub selected: Vec<String>,
    pub exclusions: BTreeMap<String, Exclusion>,
}

pub fn validate_plan(
    session: &RepairSession<'_>,
    plan: &ProbePlan,
    policy: &SelectionPolicy,
) -> Result<Validation, GenaiError> {
    let tests: Vec<&TestCase> = session.bug.tests.iter().collect();
    let target = TraceTarget {
        bug: session.bug,
        role: ProgramRole::Buggy,
        source: &session.bug.program_source,
    };
    let events = collect_traces(session.collector, &target, &tests, plan)?;
    let records = records_for_plan(plan, &session.test_ids(), &events)?;
    let summaries = summarize(plan, session.partition, &records)?;
    let selected = policy.select(&summaries);
    let exclusions = summaries
        .iter()
        .filter_map(|s| policy.judge(s).err().map(|e| (s.spec_id.clone(), e)))
        .collect();
    Ok(Validation {
        plan: plan.clone(),
        records,
        summaries,
        selected,
        exclusions,
    })
}

#[derive(Debug, Clone)]
pub struct Regeneration {
    /// Generator calls made, at most the configured budget.
    pub attempts: usize,
    /// Artifacts of the last attempt.
    pub validation: Validation,
    pub warnings: Vec<String>,
    pub usage: Usage,
    /// The budget ran out with an empty refined set.
    pub flagged_empty: bool,
}

fn rejection_note(v: &Validation) -> String {
    if v.plan.is_empty() {
        return "\nYour previous answer contained no usable plan. Follow the required format.\n"
            .to_owned();
    }
    let mut note = String::from("\nYour previous postconditions were all rejected:\n");
    for (spec, why) in &v.exclusions {
        let reason = match why {
            Exclusion::NoPassingReach => "no passing test reached its checkpoint",
            Exclusion::NoFailingReach => "no failing test reached its checkpoint",
            Exclusion::NonConsistent => "it was violated on passing tests",
            Exclusion::Trivial => "it also held on the failing tests",
            Exclusion::ErrorHeavy => "it raised errors on most passing tests",
        };
        let expr = v.plan.spec(spec).map(|s| s.expr.as_str()).unwrap_or("");
        let _ = writeln!(note, "- `{expr}`: {reason}");
    }
    note.push_str("Propose different postconditions that are specific to the intended behavior.\n");
    note
}

/// Generate, validate and select until the refined set is non-empty or
/// `max_attempts` generator calls have been made.
pub fn regenerate_until_nontrivial(
    session: &RepairSession<'_>,
    policy: &SelectionPolicy,
    max_attempts: usize,
) -> Result<Regeneration, GenaiError> {
    if max_attempts == 0 {
        return Err(GenaiError::Config(
            "regeneration attempts must be at least 1".into(),
        ));
    }
    let failing = session
        .partition
        .failing
        .iter()
        .next()
        .and_then(|id| session.bug.test(id))
        .ok_or_else(|| {
            GenaiError::Config(format!("bug `{}` has no failing test", session.bug.id))
        })?;

    let mut usage = Usage::default();
    let mut warnings = Vec::new();
    let mut note = String::new();
    let mut attempt = 0;
    loop {
        attempt += 1;
        let generated = generate_checkpoints_and_specs(session, failing, &note)?;
        usage += generated.usage;
        warnings.extend(generated.warnings);
        let validation = validate_plan(session, &generated.plan, policy)?;
        info!(
            bug = %session.bug.id,
            attempt,
            specs = validation.plan.specs.len(),
            selected = validation.selected.len(),
            "spec generation attempt"
        );
        let done = !validation.selected.is_empty();
        if done || attempt >= max_attempts {
            return Ok(Regeneration {
                attempts: attempt,
                flagged_empty: !done,
                validation,
                warnings,
                usage,
            });
        }
        note = rejection_note(&validation);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evidence {
    Holds,
    Violated,
    Error,
    NotReached,
}

impl Evidence {
    fn of(r: &SatisfactionRecord) -> Self {
        match r.holds {
            None => Evidence::NotReached,
            Some(true) => Evidence::Holds,
            Some(false) if r.any_error => Evidence::Error,
            Some(false) => Evidence::Violated,
        }
    }

    fn phrase(self) -> &'static str {
        match self {
            Evidence::Holds => "holds",
            Evidence::Violated => "violated",
            Evidence::Error => "evaluation error",
            Evidence::NotReached => "not reached",
        }
    }
}

/// A selected spec with its signals and per-failing-test outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecEvidence {
    pub spec_id: String,
    pub checkpoint_id: String,
    pub after_line: usize,
    pub expr: String,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub failing: BTreeMap<String, Evidence>,
}

/// What the repair model is conditioned on besides the task and program.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Guidance {
    pub specs: Vec<SpecEvidence>,
    /// The refined set came from a regenerated plan.
    pub regenerated: bool,
}

fn fmt_signal(x: Option<f64>) -> String {
    x.map_or_else(|| "undefined".to_owned(), |v| format!("{v:.3}"))
}

impl Guidance {
    pub fn from_validation(v: &Validation, partition: &TestPartition, regenerated: bool) -> Self {
        let specs = v
            .selected
            .iter()
            .filter_map(|id| {
                let spec = v.plan.spec(id)?;
                let summary = v.summaries.iter().find(|s| &s.spec_id == id)?;
                let failing = v
                    .records
                    .iter()
                    .filter(|r| &r.spec_id == id && partition.failing.contains(&r.test_id))
                    .map(|r| (r.test_id.clone(), Evidence::of(r)))
                    .collect();
                Some(SpecEvidence {
                    spec_id: id.clone(),
                    checkpoint_id: spec.checkpoint.clone(),
                    after_line: v.plan.checkpoint(&spec.checkpoint)?.after_line,
                    expr: spec.expr.clone(),
                    alpha: summary.alpha,
                    beta: summary.beta,
                    failing,
                })
            })
            .collect();
        Self { specs, regenerated }
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Probe plan covering just the guiding specs.
    pub fn plan(&self) -> ProbePlan {
        let mut plan = ProbePlan::default();
        for s in &self.specs {
            if plan.checkpoint(&s.checkpoint_id).is_none() {
                plan.checkpoints.push(crate::trace::Checkpoint {
                    id: s.checkpoint_id.clone(),
                    after_line: s.after_line,
                    scope: None,
                });
            }
            plan.specs.push(crate::trace::SpecDef {
                id: s.spec_id.clone(),
                checkpoint: s.checkpoint_id.clone(),
                expr: s.expr.clone(),
            });
        }
        plan
    }

    /// Prompt section listing every spec exactly once.
    pub fn render(&self) -> String {
        if self.specs.is_empty() {
            return "No validated postconditions are available for this program.".to_owned();
        }
        let mut out = String::from("## Validated postconditions\n");
        let mut current = None;
        for s in &self.specs {
            if current != Some(&s.checkpoint_id) {
                let _ = writeln!(
                    out,
                    "\nCheckpoint {} (after line {}):",
                    s.checkpoint_id, s.after_line
                );
                current = Some(&s.checkpoint_id);
            }
            let _ = writeln!(
                out,
                "- [{}] `{}` (alpha={}, beta={})",
                s.spec_id,
                s.expr,
                fmt_signal(s.alpha),
                fmt_signal(s.beta)
            );
            let outcomes: Vec<String> = s
                .failing
                .iter()
                .map(|(t, e)| format!("{t}: {}", e.phrase()))
                .collect();
            let _ = writeln!(out, "  failing tests: {}", outcomes.join("; "));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttemptMode {
    Pure,
    Regenerated,
    Refined { iteration: usize },
}

/// One candidate program and how it fared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairAttempt {
    pub bug_id: String,
    /// Position among all attempts for the bug.
    pub attempt_index: usize,
    /// Independent sample (or refinement chain) the attempt belongs to.
    pub sample_index: usize,
    pub mode: AttemptMode,
    pub patch_source: Option<String>,
    pub verdicts: BTreeMap<String, Verdict>,
    /// Every test of the suite has a passing verdict.
    pub passed_all: bool,
    pub usage: UsageCost,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

struct Checked {
    verdicts: BTreeMap<String, Verdict>,
    runs: BTreeMap<String, TestRun>,
    passed_all: bool,
    note: Option<String>,
    source: Option<String>,
}

fn check_candidate(
    session: &RepairSession<'_>,
    source: Option<&str>,
) -> Result<Checked, GenaiError> {
    let Some(source) = source else {
        return Ok(Checked {
            verdicts: BTreeMap::new(),
            runs: BTreeMap::new(),
            passed_all: false,
            note: Some("response contained no fenced code block".into()),
            source: None,
        });
    };
    let runs = run_suite(source, &session.bug.tests, session.sandbox)?;
    let verdicts: BTreeMap<String, Verdict> =
        runs.iter().map(|(id, r)| (id.clone(), r.verdict)).collect();
    let passed_all =
        verdicts.len() == session.bug.tests.len() && verdicts.values().all(|v| v.is_pass());
    Ok(Checked {
        verdicts,
        runs,
        passed_all,
        note: None,
        source: Some(source.to_owned()),
    })
}

/// Draws `n_samples` independent candidates from the same prompt and runs
/// each against the full suite.
pub fn generate_repairs(
    session: &RepairSession<'_>,
    guidance: &Guidance,
    n_samples: usize,
) -> Result<Vec<RepairAttempt>, GenaiError> {
    if n_samples == 0 {
        return Err(GenaiError::Config("sample count must be at least 1".into()));
    }
    let prompt = repair_prompt(session.bug, &guidance.render());
    let mode = if guidance.regenerated {
        AttemptMode::Regenerated
    } else {
        AttemptMode::Pure
    };
    (0..n_samples)
        .map(|i| {
            let proposal = session.ask_patch(format!("patch_s{i}"), &prompt)?;
            let checked = check_candidate(session, proposal.source.as_deref())?;
            debug!(bug = %session.bug.id, sample = i, passed = checked.passed_all, "candidate");
            Ok(RepairAttempt {
                bug_id: session.bug.id.clone(),
                attempt_index: i,
                sample_index: i,
                mode,
                patch_source: proposal.source,
                verdicts: checked.verdicts,
                passed_all: checked.passed_all,
                usage: session.cost(proposal.usage)?,
                note: checked.note,
            })
        })
        .collect()
}

fn test_feedback(session: &RepairSession<'_>, checked: &Checked) -> String {
    if checked.runs.is_empty() {
        return "Your reply did not contain the full program in a fenced code block.".to_owned();
    }
    let mut out = String::new();
    let failed = checked.runs.values().filter(|r| !r.verdict.is_pass());
    for run in failed.take(FEEDBACK_TESTS) {
        let Some(test) = session.bug.test(&run.test_id) else {
            continue;
        };
        let reason = match run.verdict {
            Verdict::Fail(r) => serde_json::to_value(r)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default(),
            Verdict::Pass => continue,
        };
        let _ = write!(
            out,
            "Test {} ({reason})\nInput:\n```\n{}\n```\nExpected:\n```\n{}\n```\nGot:\n```\n{}\n```\n",
            test.id,
            excerpt(String::from_utf8_lossy(&test.input).trim_end()),
            excerpt(&normalize_output(&test.expected_output)),
            excerpt(&normalize_output(&run.stdout)),
        );
        let stderr = String::from_utf8_lossy(&run.stderr);
        if !stderr.trim().is_empty() {
            let _ = write!(out, "Stderr:\n```\n{}\n```\n", excerpt(stderr.trim_end()));
        }
    }
    out
}

/// Selected specs the candidate still violates on its failing tests, or the
/// original program's evidence when candidates cannot be traced.
fn spec_feedback(session: &RepairSession<'_>, guidance: &Guidance, checked: &Checked) -> String {
    if guidance.is_empty() {
        return String::new();
    }
    let list = |out: &mut String, hits: &BTreeMap<&str, Vec<String>>| {
        for s in &guidance.specs {
            if let Some(tests) = hits.get(s.spec_id.as_str()) {
                let _ = writeln!(
                    out,
                    "- [{}] after line {}: `{}` violated on {}",
                    s.spec_id,
                    s.after_line,
                    s.expr,
                    tests.join(", ")
                );
            }
        }
    };

    let failing: Vec<&TestCase> = checked
        .runs
        .values()
        .filter(|r| !r.verdict.is_pass())
        .filter_map(|r| session.bug.test(&r.test_id))
        .collect();
    let traced = checked.source.as_deref().map(|src| {
        let target = TraceTarget {
            bug: session.bug,
            role: ProgramRole::Candidate,
            source: src,
        };
        let plan = guidance.plan();
        collect_traces(session.collector, &target, &failing, &plan).and_then(|events| {
            let ids: Vec<&str> = failing.iter().map(|t| t.id.as_str()).collect();
            records_for_plan(&plan, &ids, &events)
        })
    });

    let mut out = String::new();
    match traced {
        Some(Ok(records)) => {
            let mut hits: BTreeMap<&str, Vec<String>> = BTreeMap::new();
            for r in &records {
                if r.holds == Some(false) {
                    hits.entry(r.spec_id.as_str())
                        .or_default()
                        .push(r.test_id.clone());
                }
            }
            if !hits.is_empty() {
                out.push_str("Postconditions your program still violates:\n");
                list(&mut out, &hits);
            }
        }
        other => {
            if let Some(Err(e)) = other {
                debug!(bug = %session.bug.id, error = %e, "candidate not traced, reusing original evidence");
            }
            let mut hits: BTreeMap<&str, Vec<String>> = BTreeMap::new();
            for s in &guidance.specs {
                let tests: Vec<String> = s
                    .failing
                    .iter()
                    .filter(|(_, e)| matches!(e, Evidence::Violated | Evidence::Error))
                    .map(|(t, _)| t.clone())
                    .collect();
                if !tests.is_empty() {
                    hits.insert(&s.spec_id, tests);
                }
            }
            out.push_str("Postconditions violated by the original program:\n");
            list(&mut out, &hits);
        }
    }
    out
}

/// One refinement chain: the first iteration uses the repair prompt, each
/// later one feeds back the previous candidate's failing tests and any
/// selected specs it still violates. Stops at the first passing candidate.
pub fn iterative_refine(
    session: &RepairSession<'_>,
    guidance: &Guidance,
    max_iterations: usize,
    sample_index: usize,
    first_attempt_index: usize,
) -> Result<Vec<RepairAttempt>, GenaiError> {
    if max_iterations == 0 {
        return Err(GenaiError::Config(
            "refinement iterations must be at least 1".into(),
        ));
    }
    let base = repair_prompt(session.bug, &guidance.render());
    let total = session.bug.tests.len();
    let mut attempts = Vec::new();
    let mut prompt = base.clone();
    for iteration in 1..=max_iterations {
        let label = format!("patch_s{sample_index}_i{iteration:02}");
        let proposal = session.ask_patch(label, &prompt)?;
        let checked = check_candidate(session, proposal.source.as_deref())?;
        let passed = checked.passed_all;
        if !passed && iteration < max_iterations {
            let failed = if checked.runs.is_empty() {
                total
            } else {
                checked
                    .runs
                    .values()
                    .filter(|r| !r.verdict.is_pass())
                    .count()
            };
            prompt = refine_prompt(
                &base,
                &proposal.raw,
                failed,
                total,
                &test_feedback(session, &checked),
                &spec_feedback(session, guidance, &checked),
            );
        }
        attempts.push(RepairAttempt {
            bug_id: session.bug.id.clone(),
            attempt_index: first_attempt_index + iteration - 1,
            sample_index,
            mode: AttemptMode::Refined { iteration },
            patch_source: proposal.source,
            verdicts: checked.verdicts,
            passed_all: passed,
            usage: session.cost(proposal.usage)?,
            note: checked.note,
        });
        if passed {
            break;
        }
    }
    Ok(attempts)
}
