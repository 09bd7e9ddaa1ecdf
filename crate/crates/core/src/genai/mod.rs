//! Model-facing boundary: clients, prompts, and the generation and repair
//! loops with their budgets.

mod client;
mod http;
mod mock;
pub mod parse;
pub mod prompt;
mod repair;

use thiserror::Error;

pub use client::{
    with_retries, Completion, Message, ModelClient, PatchProposal, Price, PriceTable, Prompt,
    PromptKind, Role, SpecProposal, Usage, UsageCost,
};
pub use http::{HttpClient, HttpSettings, API_BASE_ENV, API_KEY_ENV, MODEL_ENV, PRICE_TABLE_ENV};
pub use mock::{MockClient, MOCK_IDENTITY};
pub use repair::{
    generate_checkpoints_and_specs, generate_repairs, iterative_refine,
    regenerate_until_nontrivial, validate_plan, AttemptMode, Evidence, GeneratedPlan, Guidance,
    LoggedPrompt, Regeneration, RepairAttempt, RepairSession, SpecEvidence, Validation,
};

use crate::executor::ExecError;
use crate::signals::SignalError;

/// Extra tries after a retryable client failure.
pub const CLIENT_RETRIES: usize = 2;

#[derive(Debug, Error)]
pub enum GenaiError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("endpoint returned {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("client configuration: {0}")]
    Config(String),
    #[error("no price entry for model `{0}`")]
    MissingPrice(String),
    #[error("no mock response for bug `{bug}` ({kind}) with prompt hash {hash}")]
    MockExhausted {
        bug: String,
        kind: &'static str,
        hash: String,
    },
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

impl GenaiError {
    pub fn is_retryable(&self) -> bool {
        match self {
            GenaiError::Transport(_) => true,
            GenaiError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}
