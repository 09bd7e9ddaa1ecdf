use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::client::{Completion, ModelClient, Prompt, PromptKind, Usage};
use super::GenaiError;

pub const MOCK_IDENTITY: &str = "mock";

#[derive(Debug)]
enum Source {
    /// `<dir>/by_hash/<hash>.md`, then `<dir>/<bug>/<kind>/NNN.md`.
    Dir {
        root: PathBuf,
        scripted: bool,
    },
    Memory(BTreeMap<(String, PromptKind), Vec<String>>),
}

#[derive(Debug, Default)]
struct State {
    cursors: BTreeMap<(String, PromptKind), usize>,
    calls: Vec<(String, PromptKind, String)>,
}

/// Offline client replaying canned responses.
///
/// Hash lookups depend only on the prompt. Scripted sequences are consumed
/// in order per (bug, kind) and the last entry repeats once exhausted, so a
/// run is reproducible as long as each bug's calls happen in the same order.
#[derive(Debug)]
pub struct MockClient {
    source: Source,
    state: Mutex<State>,
}

fn estimate_tokens(chars: usize) -> u64 {
    chars.div_ceil(4) as u64
}

impl MockClient {
    /// Hash fixtures with a scripted fallback.
    pub fn from_dir(root: impl Into<PathBuf>) -> Self {
        Self::with_source(Source::Dir {
            root: root.into(),
            scripted: true,
        })
    }

    /// Hash fixtures only.
    pub fn hashed(root: impl Into<PathBuf>) -> Self {
        Self::with_source(Source::Dir {
            root: root.into(),
            scripted: false,
        })
    }

    pub fn scripted(
        responses: impl IntoIterator<Item = ((String, PromptKind), Vec<String>)>,
    ) -> Self {
        Self::with_source(Source::Memory(responses.into_iter().collect()))
    }

    fn with_source(source: Source) -> Self {
        Self {
            source,
            state: Mutex::new(State::default()),
        }
    }

    pub fn call_count(&self) -> usize {
        self.state.lock().expect("mock state").calls.len()
    }

    pub fn calls_for(&self, bug: &str, kind: PromptKind) -> usize {
        self.state
            .lock()
            .expect("mock state")
            .calls
            .iter()
            .filter(|(b, k, _)| b == bug && *k == kind)
            .count()
    }

    /// (bug, kind, prompt hash) of every call so far, in call order.
    pub fn calls(&self) -> Vec<(String, PromptKind, String)> {
        self.state.lock().expect("mock state").calls.clone()
    }

    fn next_index(state: &mut State, prompt: &Prompt) -> usize {
        let cursor = state
            .cursors
            .entry((prompt.bug_id.clone(), prompt.kind))
            .or_default();
        let i = *cursor;
        *cursor += 1;
        i
    }

    fn scripted_file(dir: &Path, index: usize) -> Option<PathBuf> {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .ok()?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "md"))
            .collect();
        files.sort();
        let last = files.len().checked_sub(1)?;
        files.get(index.min(last)).cloned()
    }

    fn lookup(&self, prompt: &Prompt, hash: &str, state: &mut State) -> Option<String> {
        match &self.source {
            Source::Memory(map) => {
                let seq = map.get(&(prompt.bug_id.clone(), prompt.kind))?;
                let i = Self::next_index(state, prompt);
                seq.get(i.min(seq.len().checked_sub(1)?)).cloned()
            }
            Source::Dir { root, scripted } => {
                let by_hash = root.join("by_hash").join(format!("{hash}.md"));
                if let Ok(text) = fs::read_to_string(&by_hash) {
                    return Some(text);
                }
                if !scripted {
                    return None;
                }
                let i = Self::next_index(state, prompt);
                let dir = root.join(&prompt.bug_id).join(prompt.kind.dir_name());
                fs::read_to_string(Self::scripted_file(&dir, i)?).ok()
            }
        }
    }
}

impl ModelClient for MockClient {
    fn identity(&self) -> &str {
        MOCK_IDENTITY
    }

    fn deterministic(&self) -> bool {
        matches!(
            self.source,
            Source::Dir {
                scripted: false,
                ..
            }
        )
    }

    fn complete(&self, prompt: &Prompt) -> Result<Completion, GenaiError> {
        let hash = prompt.stable_hash();
        let mut state = self.state.lock().expect("mock state");
        state
            .calls
            .push((prompt.bug_id.clone(), prompt.kind, hash.clone()));
        let text =
            self.lookup(prompt, &hash, &mut state)
                .ok_or_else(|| GenaiError::MockExhausted {
                    bug: prompt.bug_id.clone(),
                    kind: prompt.kind.dir_name(),
                    hash,
                })?;
        let usage = Usage {
            prompt_tokens: estimate_tokens(prompt.char_len()),
            completion_tokens: estimate_tokens(text.chars().count()),
        };
        Ok(Completion { text, usage })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genai::Message;

    fn prompt(bug: &str, kind: PromptKind, body: &str) -> Prompt {
        Prompt {
            bug_id: bug.into(),
            kind,
            messages: vec![Message::user(body)],
        }
    }

    #[test]
    fn scripted_sequence_repeats_last() {
        let m = MockClient::scripted([(
            ("b".to_owned(), PromptKind::Patch),
            vec!["one".to_owned(), "two".to_owned()],
        )]);
        let p = prompt("b", PromptKind::Patch, "x");
        let texts: Vec<_> = (0..4).map(|_| m.complete(&p).unwrap().text).collect();
        assert_eq!(texts, ["one", "two", "two", "two"]);
        assert_eq!(m.calls_for("b", PromptKind::Patch), 4);
        assert!(matches!(
            m.complete(&prompt("b", PromptKind::Specs, "x")),
            Err(GenaiError::MockExhausted { .. })
        ));
        assert!(!m.deterministic());
    }

    #[test]
    fn hash_fixture_wins_and_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let p = prompt("b", PromptKind::Specs, "hello");
        fs::create_dir_all(dir.path().join("by_hash")).unwrap();
        fs::write(
            dir.path()
                .join("by_hash")
                .join(format!("{}.md", p.stable_hash())),
            "canned",
        )
        .unwrap();
        let m = MockClient::hashed(dir.path());
        assert!(m.deterministic());
        let a = m.complete(&p).unwrap();
        let b = m.complete(&p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.text, "canned");
        assert_eq!(a.usage.prompt_tokens, 2);
        assert!(m
            .complete(&prompt("b", PromptKind::Specs, "other"))
            .is_err());
    }

    #[test]
    fn scripted_dir_files_are_read_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let specs = dir.path().join("b").join("specs");
        fs::create_dir_all(&specs).unwrap();
        fs::write(specs.join("000.md"), "first").unwrap();
        fs::write(specs.join("001.md"), "second").unwrap();
        let m = MockClient::from_dir(dir.path());
        let p = prompt("b", PromptKind::Specs, "x");
        assert_eq!(m.complete(&p).unwrap().text, "first");
        assert_eq!(m.complete(&p).unwrap().text, "second");
        assert_eq!(m.complete(&p).unwrap().text, "second");
    }
}
