use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::PathBuf;

use rayon::prelude::*;
use tracing::warn;

use super::sandbox::{run_process, Sandbox, Termination};
use super::ExecError;
use crate::corpus::{BugInstance, TestCase};
use crate::trace::{parse_trace_lines, ProbePlan, TraceEvent};

/// Environment variable naming the runner's side-channel file.
pub const TRACE_PATH_ENV: &str = "SPECREPAIR_TRACE_PATH";
/// Environment variable carrying the id of the test being run.
pub const TEST_ID_ENV: &str = "SPECREPAIR_TEST_ID";
/// Exit status the runner uses for failures inside the shim itself.
pub const SHIM_FAILURE_EXIT: i32 = 86;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProgramRole {
    Buggy,
    Reference,
    Candidate,
}

#[derive(Debug, Clone, Copy)]
pub struct TraceTarget<'a> {
    pub bug: &'a BugInstance,
    pub role: ProgramRole,
    pub source: &'a str,
}

/// Source of checkpoint trace events for a program under a probe plan.
pub trait TraceCollector: Send + Sync {
    fn collect(
        &self,
        target: &TraceTarget<'_>,
        tests: &[&TestCase],
        plan: &ProbePlan,
    ) -> Result<Vec<TraceEvent>, ExecError>;
}

/// Collects one instrumented pass per test covering every checkpoint of
/// the plan.
pub fn collect_traces(
    collector: &dyn TraceCollector,
    target: &TraceTarget<'_>,
    tests: &[&TestCase],
    plan: &ProbePlan,
) -> Result<Vec<TraceEvent>, ExecError> {
    if plan.is_empty() || tests.is_empty() {
        return Ok(Vec::new());
    }
    collector.collect(target, tests, plan)
}

/// Drives an external runner shim.
///
/// The shim is invoked as `<runner argv> --plan <plan.json> --source <program>`
/// with the test input on stdin, [`TRACE_PATH_ENV`] pointing at the side
/// channel and [`TEST_ID_ENV`] naming the test.
#[derive(Debug, Clone)]
pub struct RunnerCollector {
    pub runner: Vec<String>,
    pub sandbox: Sandbox,
}

impl RunnerCollector {
    pub fn new(runner: Vec<String>, sandbox: Sandbox) -> Self {
        Self { runner, sandbox }
    }

    fn run_one(
        &self,
        source: &str,
        test: &TestCase,
        plan: &ProbePlan,
        plan_json: &str,
    ) -> Result<Vec<TraceEvent>, ExecError> {
        let dir = tempfile::tempdir()?;
        let program = dir.path().join("program.py");
        let plan_path = dir.path().join("plan.json");
        let trace_path = dir.path().join("trace.jsonl");
        fs::write(&program, source)?;
        fs::write(&plan_path, plan_json)?;
        fs::write(&trace_path, "")?;

        let mut argv = self.runner.clone();
        argv.extend([
            "--plan".to_owned(),
            plan_path.to_string_lossy().into_owned(),
            "--source".to_owned(),
            program.to_string_lossy().into_owned(),
        ]);
        let mut cmd = self.sandbox.base_command(&argv, dir.path());
        cmd.env(TRACE_PATH_ENV, &trace_path)
            .env(TEST_ID_ENV, &test.id);
        let out = run_process(cmd, &test.input, &self.sandbox.limits)?;

        if out.termination == Termination::Exited(SHIM_FAILURE_EXIT) {
            return Err(ExecError::Instrumentation {
                test: test.id.clone(),
                message: String::from_utf8_lossy(&out.stderr).trim().to_owned(),
            });
        }
        if out.termination == Termination::TimedOut {
            warn!(test = %test.id, "instrumented run timed out; keeping partial events");
        }

        let raw = fs::read_to_string(&trace_path)?;
        let events = parse_trace_lines(&raw).map_err(|source| ExecError::InvalidTrace {
            test: test.id.clone(),
            source,
        })?;
        for e in &events {
            let known = plan
                .spec(&e.spec_id)
                .is_some_and(|s| s.checkpoint == e.checkpoint_id);
            if e.test_id != test.id || !known {
                return Err(ExecError::InvalidTrace {
                    test: test.id.clone(),
                    source: crate::trace::TraceError::Wire {
                        line: 0,
                        message: format!(
                            "event for test `{}` spec `{}` at `{}` does not belong to this run",
                            e.test_id, e.spec_id, e.checkpoint_id
                        ),
                    },
                });
            }
        }
        Ok(events)
    }
}

impl TraceCollector for RunnerCollector {
    fn collect(
        &self,
        target: &TraceTarget<'_>,
        tests: &[&TestCase],
        plan: &ProbePlan,
    ) -> Result<Vec<TraceEvent>, ExecError> {
        let plan_json = serde_json::to_string(plan).expect("plan serializes");
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.sandbox.limits.max_parallel)
            .build()
            .map_err(|e| ExecError::Limits(e.to_string()))?;
        let per_test: Vec<Vec<TraceEvent>> = pool.install(|| {
            tests
                .par_iter()
                .map(|t| self.run_one(target.source, t, plan, &plan_json))
                .collect::<Result<_, _>>()
        })?;
        Ok(per_test.into_iter().flatten().collect())
    }
}

/// Replays runner output recorded next to each bug:
/// `<bug>/traces/plan.json` (the plan that was recorded),
/// `<bug>/traces/program.jsonl` and `<bug>/traces/reference.jsonl`.
///
/// Any plan whose specs are all covered by the recording can be replayed.
#[derive(Debug, Clone)]
pub struct RecordedCollector {
    subdir: String,
}

impl Default for RecordedCollector {
    fn default() -> Self {
        Self {
            subdir: "traces".into(),
        }
    }
}

impl RecordedCollector {
    pub fn new(subdir: impl Into<String>) -> Self {
        Self {
            subdir: subdir.into(),
        }
    }

    fn recording_error(path: PathBuf, message: impl Into<String>) -> ExecError {
        ExecError::Recording {
            path,
            message: message.into(),
        }
    }
}

impl TraceCollector for RecordedCollector {
    fn collect(
        &self,
        target: &TraceTarget<'_>,
        tests: &[&TestCase],
        plan: &ProbePlan,
    ) -> Result<Vec<TraceEvent>, ExecError> {
        let file = match target.role {
            ProgramRole::Buggy => "program.jsonl",
            ProgramRole::Reference => "reference.jsonl",
            ProgramRole::Candidate => {
                return Err(ExecError::Unsupported(
                    "recorded traces cannot cover candidate patches".into(),
                ))
            }
        };
        let dir = target.bug.dir.join(&self.subdir);
        let plan_path = dir.join("plan.json");
        let raw = fs::read_to_string(&plan_path)
            .map_err(|e| Self::recording_error(plan_path.clone(), e.to_string()))?;
        let recorded: ProbePlan = serde_json::from_str(&raw)
            .map_err(|e| Self::recording_error(plan_path.clone(), e.to_string()))?;

        for spec in &plan.specs {
            let rec = recorded.spec(&spec.id).ok_or_else(|| {
                Self::recording_error(
                    plan_path.clone(),
                    format!("spec `{}` not recorded", spec.id),
                )
            })?;
            if rec.checkpoint != spec.checkpoint || rec.expr.trim() != spec.expr.trim() {
                return Err(Self::recording_error(
                    plan_path.clone(),
                    format!("spec `{}` differs from the recorded one", spec.id),
                ));
            }
        }
        for cp in &plan.checkpoints {
            let rec = recorded.checkpoint(&cp.id).ok_or_else(|| {
                Self::recording_error(
                    plan_path.clone(),
                    format!("checkpoint `{}` not recorded", cp.id),
                )
            })?;
            let expected_anchor = match target.role {
                ProgramRole::Reference => target.bug.reference_anchor(&cp.id),
                _ => Some(rec.after_line),
            };
            if expected_anchor != Some(cp.after_line) {
                return Err(Self::recording_error(
                    plan_path.clone(),
                    format!("checkpoint `{}` was recorded at another line", cp.id),
                ));
            }
        }

        let trace_path = dir.join(file);
        let raw = fs::read_to_string(&trace_path)
            .map_err(|e| Self::recording_error(trace_path.clone(), e.to_string()))?;
        let events = parse_trace_lines(&raw)
            .map_err(|e| Self::recording_error(trace_path.clone(), e.to_string()))?;

        let wanted_tests: BTreeSet<&str> = tests.iter().map(|t| t.id.as_str()).collect();
        let wanted_specs: HashMap<&str, &str> = plan
            .specs
            .iter()
            .map(|s| (s.id.as_str(), s.checkpoint.as_str()))
            .collect();
        Ok(events
            .into_iter()
            .filter(|e| {
                wanted_tests.contains(e.test_id.as_str())
                    && wanted_specs.get(e.spec_id.as_str()) == Some(&e.checkpoint_id.as_str())
            })
            .collect())
    }
}
