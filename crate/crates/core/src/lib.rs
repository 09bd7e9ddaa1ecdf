//! Postcondition-guided program repair.
//!
//! The crate validates model-generated checkpoint postconditions against the
//! passing and failing executions of a buggy program, keeps the ones that are
//! both consistent with passing runs (alpha) and violated by failing runs
//! (beta), and conditions a repair model on the surviving set.
//!
//! Module map:
//! - [`corpus`]: bug instances, test suites, output comparison, partitioning
//! - [`trace`]: probe plans and the runner trace wire format
//! - [`executor`]: sandboxed runs, trace collection, per-test aggregation
//! - [`signals`]: alpha/beta, selection, region taxonomy, delta-alpha
//! - [`genai`]: model clients, prompts, regeneration and repair loops
//! - [`evaluation`]: pass@k, win/draw rates, Cohen's kappa, costs, reports
//! - [`workflow`]: per-bug orchestration over an artifact directory

pub mod config;
pub mod corpus;
pub mod evaluation;
pub mod executor;
pub mod genai;
pub mod signals;
pub mod trace;
pub mod workflow;

pub use config::{Ablation, RepairMode, RunConfig};
pub use corpus::{BugInstance, Problem, TestCase, TestPartition};
pub use signals::{Region, SignalSummary, Thresholds};
pub use trace::{ProbePlan, TraceEvent};
