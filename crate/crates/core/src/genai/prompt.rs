//! Prompt assembly from the versioned templates under `templates/`.

use super::client::{Message, Prompt, PromptKind};
use crate::corpus::{normalize_output, BugInstance, TestCase};
use crate::executor::TestRun;

pub const PROMPT_VERSION: &str = "v1";

const SPEC_SYSTEM: &str = include_str!("../../templates/spec_system.v1.txt");
const SPEC_USER: &str = include_str!("../../templates/spec_user.v1.txt");
const REPAIR_SYSTEM: &str = include_str!("../../templates/repair_system.v1.txt");
const REPAIR_USER: &str = include_str!("../../templates/repair_user.v1.txt");
const REFINE_USER: &str = include_str!("../../templates/refine_user.v1.txt");

/// Longest text excerpt (in chars) quoted from a test or an output.
pub const EXCERPT_CHARS: usize = 2000;

/// Replaces every `{{key}}` with its value. Unknown placeholders stay.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_owned();
    for (key, value) in vars {
        out = out.replace(&format!("{{{{{key}}}}}"), value);
    }
    out
}

/// Program text with right-aligned 1-based line numbers.
pub fn numbered_listing(source: &str) -> String {
    let lines: Vec<&str> = source.lines().collect();
    let width = lines.len().max(1).to_string().len();
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{:>width$} | {l}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn excerpt(text: &str) -> String {
    let mut chars = text.chars();
    let head: String = chars.by_ref().take(EXCERPT_CHARS).collect();
    if chars.next().is_some() {
        format!("{head}\n... (truncated)")
    } else {
        head
    }
}

fn failure_label(run: &TestRun) -> String {
    match run.verdict {
        crate::corpus::Verdict::Pass => "passed".into(),
        crate::corpus::Verdict::Fail(reason) => {
            let name = serde_json::to_value(reason)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default();
            match run.exit_code {
                Some(code) if code != 0 => format!("{name}, exit code {code}"),
                _ => name,
            }
        }
    }
}

pub fn spec_prompt(
    bug: &BugInstance,
    failing: &TestCase,
    run: &TestRun,
    attempt_note: &str,
) -> Prompt {
    let program = numbered_listing(&bug.program_source);
    let input = excerpt(&String::from_utf8_lossy(&failing.input));
    let expected = excerpt(&normalize_output(&failing.expected_output));
    let actual = excerpt(&normalize_output(&run.stdout));
    let failure = failure_label(run);
    let user = render(
        SPEC_USER,
        &[
            ("description", &bug.problem.description),
            ("program", &program),
            ("failing_input", input.trim_end()),
            ("expected_output", &expected),
            ("failure", &failure),
            ("actual_output", &actual),
            ("attempt_note", attempt_note),
        ],
    );
    Prompt {
        bug_id: bug.id.clone(),
        kind: PromptKind::Specs,
        messages: vec![Message::system(SPEC_SYSTEM.trim_end()), Message::user(user)],
    }
}

pub fn repair_prompt(bug: &BugInstance, guidance: &str) -> Prompt {
    let program = numbered_listing(&bug.program_source);
    let user = render(
        REPAIR_USER,
        &[
            ("description", &bug.problem.description),
            ("program", &program),
            ("guidance", guidance),
        ],
    );
    Prompt {
        bug_id: bug.id.clone(),
        kind: PromptKind::Patch,
        messages: vec![
            Message::system(REPAIR_SYSTEM.trim_end()),
            Message::user(user.trim_end()),
        ],
    }
}

/// Follow-up turn after a failed candidate. Only the latest exchange is
/// kept so the prompt does not grow with the iteration count.
pub fn refine_prompt(
    base: &Prompt,
    previous_reply: &str,
    failed: usize,
    total: usize,
    test_feedback: &str,
    spec_feedback: &str,
) -> Prompt {
    let user = render(
        REFINE_USER,
        &[
            ("failed_count", &failed.to_string()),
            ("total_count", &total.to_string()),
            ("test_feedback", test_feedback),
            ("spec_feedback", spec_feedback),
        ],
    );
    let mut messages = base.messages.clone();
    messages.push(Message::assistant(previous_reply));
    messages.push(Message::user(user.trim_end()));
    Prompt {
        bug_id: base.bug_id.clone(),
        kind: PromptKind::Patch,
        messages,
    }
}
