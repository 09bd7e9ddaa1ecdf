use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::parse::{extract_code_block, parse_plan_block};
use super::GenaiError;
use crate::trace::ProbePlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Specs,
    Patch,
}

impl PromptKind {
    pub fn dir_name(self) -> &'static str {
        match self {
            PromptKind::Specs => "specs",
            PromptKind::Patch => "patches",
        }
    }
}

/// A chat request plus the routing metadata mock clients key on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub bug_id: String,
    pub kind: PromptKind,
    pub messages: Vec<Message>,
}

impl Prompt {
    /// Hex SHA-256 of the role/content sequence. Metadata is not hashed.
    pub fn stable_hash(&self) -> String {
        let seq: Vec<(Role, &str)> = self
            .messages
            .iter()
            .map(|m| (m.role, m.content.as_str()))
            .collect();
        let bytes = serde_json::to_vec(&seq).expect("prompt serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn char_len(&self) -> usize {
        self.messages
            .iter()
            .map(|m| m.content.chars().count())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
}

#[derive(Debug, Clone)]
pub struct SpecProposal {
    pub raw: String,
    pub plan: ProbePlan,
    pub warnings: Vec<String>,
    pub usage: Usage,
}

#[derive(Debug, Clone)]
pub struct PatchProposal {
    pub raw: String,
    pub source: Option<String>,
    pub usage: Usage,
}

/// A language model reachable through chat-style prompts.
///
/// Implementations must be shareable across concurrently processed bugs.
pub trait ModelClient: Send + Sync {
    fn identity(&self) -> &str;

    /// Identical prompts yield byte-identical completions.
    fn deterministic(&self) -> bool;

    fn complete(&self, prompt: &Prompt) -> Result<Completion, GenaiError>;

    fn generate_specs(&self, prompt: &Prompt) -> Result<SpecProposal, GenaiError> {
        let c = self.complete(prompt)?;
        let (plan, warnings) = parse_plan_block(&c.text);
        Ok(SpecProposal {
            raw: c.text,
            plan,
            warnings,
            usage: c.usage,
        })
    }

    fn generate_patch(&self, prompt: &Prompt) -> Result<PatchProposal, GenaiError> {
        let c = self.complete(prompt)?;
        Ok(PatchProposal {
            source: extract_code_block(&c.text),
            raw: c.text,
            usage: c.usage,
        })
    }
}

/// Dollars per token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Price {
    pub prompt: f64,
    pub completion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    pub models: BTreeMap<String, Price>,
}

impl Default for PriceTable {
    /// Only knows the mock client.
    fn default() -> Self {
        Self {
            models: BTreeMap::from([(
                super::mock::MOCK_IDENTITY.to_owned(),
                Price {
                    prompt: 1e-6,
                    completion: 4e-6,
                },
            )]),
        }
    }
}

impl PriceTable {
    pub fn load(path: &Path) -> Result<Self, GenaiError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| GenaiError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&raw)
            .map_err(|e| GenaiError::Config(format!("{}: {e}", path.display())))
    }

    pub fn price(&self, model: &str) -> Result<Price, GenaiError> {
        self.models
            .get(model)
            .copied()
            .ok_or_else(|| GenaiError::MissingPrice(model.to_owned()))
    }

    pub fn cost(&self, model: &str, usage: Usage) -> Result<UsageCost, GenaiError> {
        let p = self.price(model)?;
        Ok(UsageCost {
            model: model.to_owned(),
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
            dollar_cost: p.prompt * usage.prompt_tokens as f64
                + p.completion * usage.completion_tokens as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageCost {
    pub model: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub dollar_cost: f64,
}

/// Calls `op`, retrying transport failures up to `retries` extra times.
pub fn with_retries<T>(
    retries: usize,
    mut op: impl FnMut() -> Result<T, GenaiError>,
) -> Result<T, GenaiError> {
    let mut left = retries;
    loop {
        match op() {
            Err(e) if e.is_retryable() && left > 0 => {
                tracing::warn!(error = %e, "retrying model call");
                left -= 1;
            }
            other => return other,
        }
    }
}
