//! Probe plans and the runner's trace wire format.
//!
//! A plan is handed to the runner as JSON:
//!
//! ```json
//! {"checkpoints": [{"id": "c1", "after_line": 8}],
//!  "specs": [{"id": "s1", "checkpoint": "c1", "expr": "x >= 0"}]}
//! ```
//!
//! The runner answers with one JSON object per line on its side channel:
//! `{"t": test, "c": checkpoint, "v": visit, "s": spec, "o": "sat"|"vio"|"err", "m": note}`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CheckpointMapping;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("duplicate checkpoint id `{0}`")]
    DuplicateCheckpoint(String),
    #[error("duplicate spec id `{0}`")]
    DuplicateSpec(String),
    #[error("spec `{spec}` references unknown checkpoint `{checkpoint}`")]
    UnknownCheckpoint { spec: String, checkpoint: String },
    #[error("checkpoint `{id}` anchor {line} outside program lines 1..={max}")]
    AnchorOutOfRange { id: String, line: usize, max: usize },
    #[error("spec `{0}` has an empty expression")]
    EmptyExpression(String),
    #[error("checkpoint `{0}` has no reference mapping")]
    MissingMapping(String),
    #[error("trace line {line}: {message}")]
    Wire { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub id: String,
    /// 1-based line after which the probe fires.
    pub after_line: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecDef {
    pub id: String,
    pub checkpoint: String,
    pub expr: String,
}

/// Checkpoints Q and their candidate postconditions S'(q).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbePlan {
    pub checkpoints: Vec<Checkpoint>,
    pub specs: Vec<SpecDef>,
}

impl ProbePlan {
    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn checkpoint(&self, id: &str) -> Option<&Checkpoint> {
        self.checkpoints.iter().find(|c| c.id == id)
    }

    pub fn spec(&self, id: &str) -> Option<&SpecDef> {
        self.specs.iter().find(|s| s.id == id)
    }

    /// Strict check used for user-supplied plans.
    pub fn check(&self, program_lines: usize) -> Result<(), TraceError> {
        let mut cps = BTreeSet::new();
        for cp in &self.checkpoints {
            if !cps.insert(cp.id.as_str()) {
                return Err(TraceError::DuplicateCheckpoint(cp.id.clone()));
            }
            if cp.after_line == 0 || cp.after_line > program_lines {
                return Err(TraceError::AnchorOutOfRange {
                    id: cp.id.clone(),
                    line: cp.after_line,
                    max: program_lines,
                });
            }
        }
        let mut specs = BTreeSet::new();
        for spec in &self.specs {
            if !specs.insert(spec.id.as_str()) {
                return Err(TraceError::DuplicateSpec(spec.id.clone()));
            }
            if !cps.contains(spec.checkpoint.as_str()) {
                return Err(TraceError::UnknownCheckpoint {
                    spec: spec.id.clone(),
                    checkpoint: spec.checkpoint.clone(),
                });
            }
            if spec.expr.trim().is_empty() {
                return Err(TraceError::EmptyExpression(spec.id.clone()));
            }
        }
        Ok(())
    }

    /// Lenient variant used on model output: offending entries are dropped
    /// and reported instead of failing the whole plan.
    pub fn sanitize(self, program_lines: usize) -> (ProbePlan, Vec<TraceError>) {
        let mut warnings = Vec::new();
        let mut checkpoints: Vec<Checkpoint> = Vec::new();
        for cp in self.checkpoints {
            if checkpoints.iter().any(|c| c.id == cp.id) {
                warnings.push(TraceError::DuplicateCheckpoint(cp.id));
            } else if cp.after_line == 0 || cp.after_line > program_lines {
                warnings.push(TraceError::AnchorOutOfRange {
                    id: cp.id,
                    line: cp.after_line,
                    max: program_lines,
                });
            } else {
                checkpoints.push(cp);
            }
        }
        let mut specs: Vec<SpecDef> = Vec::new();
        for spec in self.specs {
            if specs.iter().any(|s| s.id == spec.id) {
                warnings.push(TraceError::DuplicateSpec(spec.id));
            } else if !checkpoints.iter().any(|c| c.id == spec.checkpoint) {
                warnings.push(TraceError::UnknownCheckpoint {
                    spec: spec.id,
                    checkpoint: spec.checkpoint,
                });
            } else if spec.expr.trim().is_empty() {
                warnings.push(TraceError::EmptyExpression(spec.id));
            } else {
                specs.push(spec);
            }
        }
        // checkpoints without specs carry no information
        checkpoints.retain(|c| specs.iter().any(|s| s.checkpoint == c.id));
        (ProbePlan { checkpoints, specs }, warnings)
    }

    /// Re-anchors every checkpoint onto the reference program.
    pub fn mapped(&self, mapping: &[CheckpointMapping]) -> Result<ProbePlan, TraceError> {
        let checkpoints = self
            .checkpoints
            .iter()
            .map(|cp| {
                mapping
                    .iter()
                    .find(|m| m.checkpoint_id == cp.id)
                    .map(|m| Checkpoint {
                        after_line: m.reference_anchor_line,
                        ..cp.clone()
                    })
                    .ok_or_else(|| TraceError::MissingMapping(cp.id.clone()))
            })
            .collect::<Result<_, _>>()?;
        Ok(ProbePlan {
            checkpoints,
            specs: self.specs.clone(),
        })
    }

    /// Restricts the plan to the given spec ids, keeping only the
    /// checkpoints they use.
    pub fn restricted_to(&self, spec_ids: &BTreeSet<String>) -> ProbePlan {
        let specs: Vec<SpecDef> = self
            .specs
            .iter()
            .filter(|s| spec_ids.contains(&s.id))
            .cloned()
            .collect();
        let checkpoints = self
            .checkpoints
            .iter()
            .filter(|c| specs.iter().any(|s| s.checkpoint == c.id))
            .cloned()
            .collect();
        ProbePlan { checkpoints, specs }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "sat")]
    Satisfied,
    #[serde(rename = "vio")]
    Violated,
    #[serde(rename = "err")]
    Error,
}

/// One probe observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    #[serde(rename = "t")]
    pub test_id: String,
    #[serde(rename = "c")]
    pub checkpoint_id: String,
    #[serde(rename = "v")]
    pub visit_index: u32,
    #[serde(rename = "s")]
    pub spec_id: String,
    #[serde(rename = "o")]
    pub outcome: Outcome,
    #[serde(rename = "m", default, skip_serializing_if = "Option::is_none")]
    pub error_note: Option<String>,
}

/// Parses a side-channel dump. Blank lines are ignored.
pub fn parse_trace_lines(text: &str) -> Result<Vec<TraceEvent>, TraceError> {
    let mut events = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let event: TraceEvent = serde_json::from_str(line).map_err(|e| TraceError::Wire {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if event.outcome == Outcome::Error && event.error_note.is_none() {
            return Err(TraceError::Wire {
                line: idx + 1,
                message: "error outcome without message".into(),
            });
        }
        events.push(event);
    }
    Ok(events)
}

pub fn write_trace_lines(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("trace event serializes"));
        out.push('\n');
    }
    out
}
