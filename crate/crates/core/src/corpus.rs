//! Bug instances, test suites and the output-comparison rule.
//!
//! A corpus is a directory with one sub-directory per bug:
//!
//! ```text
//! <root>/<bug>/manifest.json
//! <root>/<bug>/program.py
//! <root>/<bug>/reference.py        (optional)
//! <root>/<bug>/mapping.json        (optional, requires a reference)
//! <root>/<bug>/tests/<id>.in
//! <root>/<bug>/tests/<id>.out
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("duplicate bug id `{0}`")]
    DuplicateBug(String),
    #[error("problem `{0}` is declared with two different descriptions")]
    ConflictingProblem(String),
    #[error("no verdict for test `{0}`")]
    MissingVerdict(String),
    #[error("verdict given for unknown test `{0}`")]
    UnknownTest(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn malformed(path: &Path, message: impl Into<String>) -> CorpusError {
    CorpusError::Malformed {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// The task a program is supposed to solve.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestCase {
    pub id: String,
    pub input: Vec<u8>,
    pub expected_output: Vec<u8>,
}

/// Where a checkpoint of the buggy program lands in the reference program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMapping {
    pub checkpoint_id: String,
    pub reference_anchor_line: usize,
}

#[derive(Debug, Clone)]
pub struct BugInstance {
    pub id: String,
    pub problem: Arc<Problem>,
    pub program_source: String,
    pub reference_source: Option<String>,
    pub checkpoint_mapping: Option<Vec<CheckpointMapping>>,
    pub tests: Vec<TestCase>,
    /// Directory the instance was loaded from.
    pub dir: PathBuf,
}

impl BugInstance {
    pub fn test(&self, id: &str) -> Option<&TestCase> {
        self.tests.iter().find(|t| t.id == id)
    }

    pub fn reference_anchor(&self, checkpoint_id: &str) -> Option<usize> {
        self.checkpoint_mapping
            .as_ref()?
            .iter()
            .find(|m| m.checkpoint_id == checkpoint_id)
            .map(|m| m.reference_anchor_line)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    WrongOutput,
    NonzeroExit,
    Timeout,
    OutputCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason", rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail(FailReason),
}

impl Verdict {
    pub fn is_pass(self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

/// The passing (P) and failing (F) halves of a test suite.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestPartition {
    pub passing: BTreeSet<String>,
    pub failing: BTreeSet<String>,
}

impl TestPartition {
    pub fn len(&self) -> usize {
        self.passing.len() + self.failing.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Canonical form used for every output comparison: lossy UTF-8, trailing
/// whitespace removed from each line, trailing blank lines dropped.
pub fn normalize_output(raw: &[u8]) -> String {
    let text = String::from_utf8_lossy(raw);
    let mut lines: Vec<&str> = text.split('\n').map(str::trim_end).collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines.join("\n")
}

pub fn outputs_match(actual: &[u8], expected: &[u8]) -> bool {
    normalize_output(actual) == normalize_output(expected)
}

/// Splits the suite by verdict. Every test needs exactly one verdict.
pub fn partition_tests(
    tests: &[TestCase],
    verdicts: &BTreeMap<String, Verdict>,
) -> Result<TestPartition, CorpusError> {
    let known: BTreeSet<&str> = tests.iter().map(|t| t.id.as_str()).collect();
    if let Some(extra) = verdicts.keys().find(|k| !known.contains(k.as_str())) {
        return Err(CorpusError::UnknownTest(extra.clone()));
    }
    let mut partition = TestPartition::default();
    for test in tests {
        match verdicts.get(&test.id) {
            Some(Verdict::Pass) => partition.passing.insert(test.id.clone()),
            Some(Verdict::Fail(_)) => partition.failing.insert(test.id.clone()),
            None => return Err(CorpusError::MissingVerdict(test.id.clone())),
        };
    }
    Ok(partition)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    id: String,
    problem: Problem,
    program: String,
    #[serde(default)]
    reference: Option<String>,
    #[serde(default)]
    mapping: Option<String>,
    #[serde(default = "default_tests_dir")]
    tests: String,
}

fn default_tests_dir() -> String {
    "tests".to_owned()
}

/// Loads every bug directory under `root`, sorted by bug id.
pub fn load_corpus(root: &Path) -> Result<Vec<BugInstance>, CorpusError> {
    let entries = fs::read_dir(root).map_err(io_err(root))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(io_err(root))?;
        let path = entry.path();
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if path.is_dir() && !hidden {
            dirs.push(path);
        }
    }
    dirs.sort();

    let mut bugs = Vec::with_capacity(dirs.len());
    let mut problems: HashMap<String, Arc<Problem>> = HashMap::new();
    let mut seen = BTreeSet::new();
    for dir in dirs {
        let mut bug = load_bug(&dir)?;
        if !seen.insert(bug.id.clone()) {
            return Err(CorpusError::DuplicateBug(bug.id));
        }
        match problems.get(&bug.problem.id) {
            Some(existing) if existing.description != bug.problem.description => {
                return Err(CorpusError::ConflictingProblem(bug.problem.id.clone()));
            }
            Some(existing) => bug.problem = Arc::clone(existing),
            None => {
                problems.insert(bug.problem.id.clone(), Arc::clone(&bug.problem));
            }
        }
        bugs.push(bug);
    }
    bugs.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(bugs)
}

/// Loads a single bug directory.
pub fn load_bug(dir: &Path) -> Result<BugInstance, CorpusError> {
    let manifest_path = dir.join("manifest.json");
    let raw = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Manifest =
        serde_json::from_str(&raw).map_err(|e| malformed(&manifest_path, e.to_string()))?;

    if manifest.id.trim().is_empty() {
        return Err(malformed(&manifest_path, "empty bug id"));
    }
    if manifest.problem.id.trim().is_empty() {
        return Err(malformed(&manifest_path, "empty problem id"));
    }
    if manifest.problem.description.trim().is_empty() {
        return Err(malformed(&manifest_path, "empty problem description"));
    }

    let program_path = dir.join(&manifest.program);
    let program_source = fs::read_to_string(&program_path).map_err(io_err(&program_path))?;
    if program_source.trim().is_empty() {
        return Err(malformed(&program_path, "program source is empty"));
    }

    let reference_source = match &manifest.reference {
        Some(rel) => {
            let path = dir.join(rel);
            Some(fs::read_to_string(&path).map_err(io_err(&path))?)
        }
        None => None,
    };

    let checkpoint_mapping = match &manifest.mapping {
        Some(rel) => {
            if reference_source.is_none() {
                return Err(malformed(
                    &manifest_path,
                    "a checkpoint mapping requires a reference program",
                ));
            }
            let path = dir.join(rel);
            let raw = fs::read_to_string(&path).map_err(io_err(&path))?;
            let mapping: Vec<CheckpointMapping> =
                serde_json::from_str(&raw).map_err(|e| malformed(&path, e.to_string()))?;
            let mut ids = BTreeSet::new();
            for m in &mapping {
                if !ids.insert(m.checkpoint_id.as_str()) {
                    return Err(malformed(
                        &path,
                        format!("checkpoint `{}` mapped twice", m.checkpoint_id),
                    ));
                }
            }
            Some(mapping)
        }
        None => None,
    };

    let tests = load_tests(&dir.join(&manifest.tests))?;

    Ok(BugInstance {
        id: manifest.id,
        problem: Arc::new(manifest.problem),
        program_source,
        reference_source,
        checkpoint_mapping,
        tests,
        dir: dir.to_path_buf(),
    })
}

fn load_tests(dir: &Path) -> Result<Vec<TestCase>, CorpusError> {
    let mut inputs = BTreeMap::new();
    let mut outputs = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let (Some(stem), Some(ext)) = (path.file_stem(), path.extension()) else {
            continue;
        };
        let stem = stem.to_string_lossy().into_owned();
        match ext.to_str() {
            Some("in") => inputs.insert(stem, path),
            Some("out") => outputs.insert(stem, path),
            _ => None,
        };
    }

    let mut tests = Vec::with_capacity(inputs.len());
    for (id, in_path) in &inputs {
        let out_path = outputs
            .remove(id)
            .ok_or_else(|| malformed(in_path, "no matching .out file"))?;
        tests.push(TestCase {
            id: id.clone(),
            input: fs::read(in_path).map_err(io_err(in_path))?,
            expected_output: fs::read(&out_path).map_err(io_err(&out_path))?,
        });
    }
    if let Some((_, orphan)) = outputs.into_iter().next() {
        return Err(malformed(&orphan, "no matching .in file"));
    }
    Ok(tests)
}
