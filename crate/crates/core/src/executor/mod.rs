//! Sandboxed execution of subject programs.
//!
//! Verdicts (and therefore the P/F partition) come only from plain,
//! uninstrumented runs. Instrumented runs go through a [`TraceCollector`]
//! and only ever contribute trace events.

mod aggregate;
mod collect;
mod sandbox;

use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;

pub use aggregate::{aggregate, records_for_plan, SatisfactionRecord};
pub use collect::{
    collect_traces, ProgramRole, RecordedCollector, RunnerCollector, TraceCollector, TraceTarget,
    SHIM_FAILURE_EXIT, TEST_ID_ENV, TRACE_PATH_ENV,
};
pub use sandbox::{run_process, run_suite, run_test, ProcessOutput, Sandbox, Termination, TestRun};

use crate::trace::TraceError;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("invalid run limits: {0}")]
    Limits(String),
    #[error("failed to spawn `{program}`: {source}")]
    Spawn {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("sandbox i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("instrumentation failed for test `{test}`: {message}")]
    Instrumentation { test: String, message: String },
    #[error("trace side channel for test `{test}` is corrupt: {source}")]
    InvalidTrace {
        test: String,
        #[source]
        source: TraceError,
    },
    #[error("trace data integrity: {0}")]
    Integrity(String),
    #[error("no recorded traces at {path}: {message}")]
    Recording { path: PathBuf, message: String },
    #[error("{0}")]
    Unsupported(String),
}

/// Resource limits applied to every subprocess.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunLimits {
    pub wall_timeout: Duration,
    pub output_cap: usize,
    pub max_parallel: usize,
}

impl RunLimits {
    pub fn new(
        wall_timeout: Duration,
        output_cap: usize,
        max_parallel: usize,
    ) -> Result<Self, ExecError> {
        if wall_timeout.is_zero() {
            return Err(ExecError::Limits("wall timeout must be positive".into()));
        }
        if output_cap == 0 {
            return Err(ExecError::Limits("output cap must be positive".into()));
        }
        if max_parallel == 0 {
            return Err(ExecError::Limits("max_parallel must be positive".into()));
        }
        Ok(Self {
            wall_timeout,
            output_cap,
            max_parallel,
        })
    }
}

impl Default for RunLimits {
    fn default() -> Self {
        Self {
            wall_timeout: Duration::from_secs(10),
            output_cap: 1 << 20,
            max_parallel: 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limits_must_be_positive() {
        assert!(RunLimits::new(Duration::ZERO, 1, 1).is_err());
        assert!(RunLimits::new(Duration::from_secs(1), 0, 1).is_err());
        assert!(RunLimits::new(Duration::from_secs(1), 1, 0).is_err());
        assert!(RunLimits::new(Duration::from_millis(1), 1, 1).is_ok());
    }
}
