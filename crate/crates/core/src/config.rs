//! Run configuration shared by the library and the CLI.

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::executor::RunLimits;
use crate::signals::{SelectionPolicy, Thresholds};

pub const DEFAULT_SAMPLES: usize = 5;
pub const DEFAULT_REGEN_ATTEMPTS: usize = 5;
pub const DEFAULT_MAX_REFINE_ITERATIONS: usize = 21;
pub const DEFAULT_TIMEOUT_SECS: u64 = 10;
pub const DEFAULT_OUTPUT_CAP: usize = 1 << 20;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub drop_alpha: bool,
    pub drop_beta: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairMode {
    /// Independent single-shot samples.
    #[default]
    Pure,
    /// Feedback-driven refinement chains.
    Refine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub thresholds: Thresholds,
    pub n_samples: usize,
    pub regen_attempts: usize,
    pub max_refine_iterations: usize,
    pub timeout_secs: u64,
    pub output_cap: usize,
    pub jobs: usize,
    pub ablation: Ablation,
    pub mode: RepairMode,
    /// Exclude specs that error on more than half of the reaching passing tests.
    pub exclude_error_heavy: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("corpus"),
            thresholds: Thresholds::default(),
            n_samples: DEFAULT_SAMPLES,
            regen_attempts: DEFAULT_REGEN_ATTEMPTS,
            max_refine_iterations: DEFAULT_MAX_REFINE_ITERATIONS,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            output_cap: DEFAULT_OUTPUT_CAP,
            jobs: 1,
            ablation: Ablation::default(),
            mode: RepairMode::Pure,
            exclude_error_heavy: false,
        }
    }
}

impl RunConfig {
    pub fn selection_policy(&self) -> SelectionPolicy {
        SelectionPolicy {
            thresholds: self.thresholds,
            use_alpha: !self.ablation.drop_alpha,
            use_beta: !self.ablation.drop_beta,
            exclude_error_heavy: self.exclude_error_heavy,
        }
    }

    /// Per-test limits; bug-level parallelism is governed by `jobs`.
    pub fn limits(&self) -> RunLimits {
        RunLimits {
            wall_timeout: Duration::from_secs(self.timeout_secs.max(1)),
            output_cap: self.output_cap.max(1),
            max_parallel: 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_snapshot() {
        let c = RunConfig::default();
        assert_eq!(c.n_samples, 5);
        assert_eq!(c.regen_attempts, 5);
        assert_eq!(c.max_refine_iterations, 21);
        assert_eq!(c.thresholds, Thresholds::parse("0.9", "1.0").unwrap());
        assert_eq!(c.mode, RepairMode::Pure);
        assert_eq!(c.ablation, Ablation::default());
        let p = c.selection_policy();
        assert!(p.use_alpha && p.use_beta && !p.exclude_error_heavy);
    }
}
