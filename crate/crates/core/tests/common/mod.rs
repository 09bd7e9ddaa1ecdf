#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use specrepair_core::corpus::{load_bug, partition_tests, BugInstance, TestPartition};
use specrepair_core::executor::{run_suite, RunLimits, Sandbox, TestRun};
use specrepair_core::genai::PromptKind;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn sandbox() -> Sandbox {
    Sandbox::python(RunLimits::new(Duration::from_secs(10), 1 << 20, 4).unwrap())
}

pub struct Loaded {
    pub bug: BugInstance,
    pub baseline: BTreeMap<String, TestRun>,
    pub partition: TestPartition,
}

pub fn load(bug_id: &str) -> Loaded {
    let bug = load_bug(&fixtures().join("corpus").join(bug_id)).unwrap();
    let baseline = run_suite(&bug.program_source, &bug.tests, &sandbox()).unwrap();
    let verdicts = baseline
        .iter()
        .map(|(k, r)| (k.clone(), r.verdict))
        .collect();
    let partition = partition_tests(&bug.tests, &verdicts).unwrap();
    Loaded {
        bug,
        baseline,
        partition,
    }
}

pub fn fenced(lang: &str, body: &str) -> String {
    format!("Here you go.\n\n```{lang}\n{body}\n```\n")
}

/// A spec response restricted to specs recorded for the xor fixture.
pub fn xor_specs(specs: &[(&str, &str, &str)]) -> String {
    let specs: Vec<_> = specs
        .iter()
        .map(|(id, cp, expr)| serde_json::json!({"id": id, "checkpoint": cp, "expr": expr}))
        .collect();
    let plan = serde_json::json!({
        "checkpoints": [{"id": "c1", "after_line": 8}, {"id": "c2", "after_line": 11}],
        "specs": specs,
    });
    fenced("json", &plan.to_string())
}

pub fn tautology() -> String {
    xor_specs(&[("s_true", "c2", "True")])
}

pub fn good_specs() -> String {
    xor_specs(&[
        (
            "s_xor",
            "c1",
            "all(derived[i] == original[i] ^ original[(i + 1) % n] for i in range(n))",
        ),
        ("s_true", "c2", "True"),
        ("s_bad", "c2", "count == n - 1"),
    ])
}

pub fn script(
    bug: &str,
    specs: Vec<String>,
    patches: Vec<String>,
) -> Vec<((String, PromptKind), Vec<String>)> {
    vec![
        ((bug.to_owned(), PromptKind::Specs), specs),
        ((bug.to_owned(), PromptKind::Patch), patches),
    ]
}
