//! Metrics and reports.

mod cost;
mod judge;
mod passk;
mod regions;
mod report;

use thiserror::Error;

pub use cost::{cost_summary, CostItem, CostSummary, ModelCost};
pub use judge::{
    adjudicate, cohen_kappa, judge_instances, win_draw_rates, JudgeInstance, JudgeOutcome, Kappa,
    Preference, WinDrawRates,
};
pub use passk::{pass_at_k, pass_at_k_exact, sample_counts, PassAtK, REPORTED_K};
pub use regions::{region_distribution, RegionDistribution};
pub use report::{
    write_report, BugReport, BugStatus, ExperimentReport, SignalRow, SweepRow, REGIONS_HEADER,
    SWEEP_HEADER,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid pass@k arguments n={n}, c={c}, k={k}")]
    PassAtK { n: u64, c: u64, k: u64 },
    #[error("{0} needs at least one item")]
    Empty(&'static str),
    #[error("label lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("kappa is undefined: expected agreement is 1 but observed agreement is not")]
    KappaUndefined,
    #[error(transparent)]
    Price(#[from] crate::genai::GenaiError),
    #[error("writing {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}
