//! Extraction of machine-readable blocks from model output.

use serde_json::Value;

use crate::trace::{Checkpoint, ProbePlan, SpecDef};

/// Contents of every ``` fenced block, in order. An unterminated final
/// block is ignored.
pub fn fenced_blocks(text: &str) -> Vec<(String, String)> {
    let mut blocks = Vec::new();
    let mut current: Option<(String, Vec<&str>)> = None;
    for line in text.lines() {
        let trimmed = line.trim_start();
        match current.take() {
            None => {
                if let Some(info) = trimmed.strip_prefix("```") {
                    current = Some((info.trim().to_owned(), Vec::new()));
                }
            }
            Some((info, mut body)) => {
                if trimmed.trim_end() == "```" {
                    let mut content = body.join("\n");
                    content.push('\n');
                    blocks.push((info, content));
                } else {
                    body.push(line);
                    current = Some((info, body));
                }
            }
        }
    }
    blocks
}

/// The first fenced block, taken as a full replacement program.
pub fn extract_code_block(text: &str) -> Option<String> {
    fenced_blocks(text)
        .into_iter()
        .map(|(_, body)| body)
        .find(|body| !body.trim().is_empty())
}

fn str_field<'a>(v: &'a Value, key: &str) -> Option<&'a str> {
    v.get(key)?
        .as_str()
        .map(str::trim)
        .filter(|s| !s.is_empty())
}

/// Parses the first fenced block holding a plan object. Entries with
/// missing or mistyped fields are dropped and reported; structural
/// validation against the program happens later.
pub fn parse_plan_block(text: &str) -> (ProbePlan, Vec<String>) {
    let mut warnings = Vec::new();
    let object = fenced_blocks(text).into_iter().find_map(|(_, body)| {
        serde_json::from_str::<Value>(&body)
            .ok()
            .filter(|v| v.get("checkpoints").is_some() || v.get("specs").is_some())
    });
    let Some(object) = object else {
        warnings.push("no fenced plan block in response".to_owned());
        return (ProbePlan::default(), warnings);
    };

    let mut plan = ProbePlan::default();
    let empty = Vec::new();
    for (i, cp) in object
        .get("checkpoints")
        .and_then(Value::as_array)
        .unwrap_or(&empty)
        .iter()
        .enumerate()
    {
        let line = cp.get("after_line").and_then(Value::as_u64);
        match (str_field(cp, "id"), line) {
            (Some(id), Some(line)) if line > 0 => plan.checkpoints.push(Checkpoint {
                id: id.to_owned(),
                after_line: line as usize,
                scope: str_field(cp, "scope").map(str::to_owned),
            }),
            _ => warnings.push(format!("checkpoint #{i} is malformed: {cp}")),
        }
    }
    for (i, spec) in object
        .get("specs")
        .and_then(Value::as_array)
        .unwrap_or(&empty)
        .iter()
        .enumerate()
    {
        match (
            str_field(spec, "id"),
            str_field(spec, "checkpoint"),
            str_field(spec, "expr"),
        ) {
            (Some(id), Some(cp), Some(expr)) => plan.specs.push(SpecDef {
                id: id.to_owned(),
                checkpoint: cp.to_owned(),
                expr: expr.to_owned(),
            }),
            _ => warnings.push(format!("spec #{i} is malformed: {spec}")),
        }
    }
    (plan, warnings)
}
