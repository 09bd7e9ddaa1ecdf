//! Consistency (alpha) and discriminative (beta) signals.
//!
//! For a postcondition `s` at checkpoint `q`:
//!
//! ```text
//! alpha(s) = |{p in P : p reaches q and holds}| / |{p in P : p reaches q}|
//! beta(s)  = |{f in F : f reaches q and holds}| / |{f in F : f reaches q}|
//! S_hat    = {s : alpha(s) >= theta and beta(s) < gamma}
//! ```
//!
//! Counts are kept as integers and thresholds as exact decimal fractions,
//! so every comparison is done by cross-multiplication.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::Signed;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::TestPartition;
use crate::executor::SatisfactionRecord;
use crate::trace::ProbePlan;

pub type Fraction = Ratio<u64>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SignalError {
    #[error("invalid threshold `{0}`: expected a decimal in [0, 1]")]
    InvalidThreshold(String),
    #[error("spec `{0}` has an undefined alpha or beta")]
    Undefined(String),
    #[error("record for unknown spec `{0}`")]
    UnknownSpec(String),
    #[error("record for test `{0}` that is neither passing nor failing")]
    UnknownTest(String),
    #[error("two records for spec `{spec}` on test `{test}`")]
    DuplicateRecord { spec: String, test: String },
    #[error("no reference mapping for spec `{0}`")]
    MissingReference(String),
}

/// Parses a non-negative decimal such as `0.95` into an exact fraction.
pub fn parse_decimal(text: &str) -> Option<Fraction> {
    let text = text.trim();
    let (int, frac) = text.split_once('.').unwrap_or((text, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || frac.len() > 15 {
        return None;
    }
    let den = 10u64.checked_pow(frac.len() as u32)?;
    let int: u64 = if int.is_empty() { 0 } else { int.parse().ok()? };
    let frac_v: u64 = if frac.is_empty() {
        0
    } else {
        frac.parse().ok()?
    };
    Some(Fraction::new(
        int.checked_mul(den)?.checked_add(frac_v)?,
        den,
    ))
}

/// Exact fraction for a float given in its shortest decimal form.
pub fn fraction_from_f64(x: f64) -> Option<Fraction> {
    if !x.is_finite() || x < 0.0 {
        return None;
    }
    parse_decimal(&format!("{x}"))
}

fn to_f64(f: Fraction) -> f64 {
    *f.numer() as f64 / *f.denom() as f64
}

/// A threshold in [0, 1], held exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Threshold(Fraction);

impl Threshold {
    pub fn new(value: Fraction) -> Result<Self, SignalError> {
        if value > Fraction::from_integer(1) {
            return Err(SignalError::InvalidThreshold(value.to_string()));
        }
        Ok(Self(value))
    }

    pub fn from_f64(x: f64) -> Result<Self, SignalError> {
        fraction_from_f64(x)
            .ok_or_else(|| SignalError::InvalidThreshold(x.to_string()))
            .and_then(Self::new)
    }

    pub fn value(self) -> Fraction {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        to_f64(self.0)
    }

    /// `hits / total >= self`, exactly.
    pub fn met_by(self, hits: u64, total: u64) -> bool {
        hits as u128 * *self.0.denom() as u128 >= *self.0.numer() as u128 * total as u128
    }

    /// `hits / total < self`, exactly.
    pub fn exceeds(self, hits: u64, total: u64) -> bool {
        !self.met_by(hits, total)
    }
}

impl FromStr for Threshold {
    type Err = SignalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_decimal(s)
            .ok_or_else(|| SignalError::InvalidThreshold(s.to_owned()))
            .and_then(Self::new)
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_f64())
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let x = f64::deserialize(d)?;
        Threshold::from_f64(x).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Thresholds {
    pub theta: Threshold,
    pub gamma: Threshold,
}

impl Thresholds {
    pub fn new(theta: Threshold, gamma: Threshold) -> Self {
        Self { theta, gamma }
    }

    pub fn parse(theta: &str, gamma: &str) -> Result<Self, SignalError> {
        Ok(Self::new(theta.parse()?, gamma.parse()?))
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self::parse("0.9", "1.0").expect("valid defaults")
    }
}

/// The 3x3 sensitivity grid {0.9, 0.95, 1.0}^2, theta-major.
pub fn sweep_grid() -> Vec<Thresholds> {
    const LEVELS: [&str; 3] = ["0.9", "0.95", "1.0"];
    LEVELS
        .iter()
        .flat_map(|t| {
            LEVELS
                .iter()
                .map(move |g| Thresholds::parse(t, g).expect("grid"))
        })
        .collect()
}

/// Per-spec counts and the alpha/beta derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSummary {
    pub spec_id: String,
    pub checkpoint_id: String,
    pub pass_reached: u64,
    pub pass_holds: u64,
    pub pass_errors: u64,
    pub fail_reached: u64,
    pub fail_holds: u64,
    pub fail_errors: u64,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
}

impl SignalSummary {
    pub fn from_counts(
        spec_id: impl Into<String>,
        checkpoint_id: impl Into<String>,
        pass: (u64, u64),
        fail: (u64, u64),
    ) -> Self {
        let mut s = Self {
            spec_id: spec_id.into(),
            checkpoint_id: checkpoint_id.into(),
            pass_reached: pass.0,
            pass_holds: pass.1,
            pass_errors: 0,
            fail_reached: fail.0,
            fail_holds: fail.1,
            fail_errors: 0,
            alpha: None,
            beta: None,
        };
        s.refresh();
        s
    }

    fn refresh(&mut self) {
        assert!(self.pass_holds <= self.pass_reached && self.fail_holds <= self.fail_reached);
        self.alpha = self.alpha_fraction().map(to_f64);
        self.beta = self.beta_fraction().map(to_f64);
    }

    pub fn alpha_fraction(&self) -> Option<Fraction> {
        (self.pass_reached > 0).then(|| Fraction::new(self.pass_holds, self.pass_reached))
    }

    pub fn beta_fraction(&self) -> Option<Fraction> {
        (self.fail_reached > 0).then(|| Fraction::new(self.fail_holds, self.fail_reached))
    }

    pub fn alpha_meets(&self, theta: Threshold) -> Option<bool> {
        (self.pass_reached > 0).then(|| theta.met_by(self.pass_holds, self.pass_reached))
    }

    pub fn beta_below(&self, gamma: Threshold) -> Option<bool> {
        (self.fail_reached > 0).then(|| gamma.exceeds(self.fail_holds, self.fail_reached))
    }

    /// More than half of the reaching passing tests hit an evaluation error.
    pub fn error_heavy(&self) -> bool {
        self.pass_reached > 0 && self.pass_errors * 2 > self.pass_reached
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    pass_reached: u64,
    pass_holds: u64,
    pass_errors: u64,
    fail_reached: u64,
    fail_holds: u64,
    fail_errors: u64,
}

/// Incremental alpha/beta computation over a stream of records.
#[derive(Debug)]
pub struct SignalAccumulator<'a> {
    partition: &'a TestPartition,
    specs: BTreeMap<String, (String, Counts)>,
    seen: BTreeSet<(String, String)>,
}

impl<'a> SignalAccumulator<'a> {
    pub fn new(plan: &ProbePlan, partition: &'a TestPartition) -> Self {
        let specs = plan
            .specs
            .iter()
            .map(|s| (s.id.clone(), (s.checkpoint.clone(), Counts::default())))
            .collect();
        Self {
            partition,
            specs,
            seen: BTreeSet::new(),
        }
    }

    pub fn push(&mut self, record: &SatisfactionRecord) -> Result<(), SignalError> {
        let (_, counts) = self
            .specs
            .get_mut(&record.spec_id)
            .ok_or_else(|| SignalError::UnknownSpec(record.spec_id.clone()))?;
        let passing = if self.partition.passing.contains(&record.test_id) {
            true
        } else if self.partition.failing.contains(&record.test_id) {
            false
        } else {
            return Err(SignalError::UnknownTest(record.test_id.clone()));
        };
        if !self
            .seen
            .insert((record.spec_id.clone(), record.test_id.clone()))
        {
            return Err(SignalError::DuplicateRecord {
                spec: record.spec_id.clone(),
                test: record.test_id.clone(),
            });
        }
        if !record.reached {
            return Ok(());
        }
        let holds = u64::from(record.holds == Some(true));
        let errored = u64::from(record.any_error);
        if passing {
            counts.pass_reached += 1;
            counts.pass_holds += holds;
            counts.pass_errors += errored;
        } else {
            counts.fail_reached += 1;
            counts.fail_holds += holds;
            counts.fail_errors += errored;
        }
        Ok(())
    }

    /// Summaries ordered by (checkpoint, spec).
    pub fn finish(self) -> Vec<SignalSummary> {
        let mut out: Vec<SignalSummary> = self
            .specs
            .into_iter()
            .map(|(spec_id, (checkpoint_id, c))| {
                let mut s = SignalSummary {
                    spec_id,
                    checkpoint_id,
                    pass_reached: c.pass_reached,
                    pass_holds: c.pass_holds,
                    pass_errors: c.pass_errors,
                    fail_reached: c.fail_reached,
                    fail_holds: c.fail_holds,
                    fail_errors: c.fail_errors,
                    alpha: None,
                    beta: None,
                };
                s.refresh();
                s
            })
            .collect();
        out.sort_by(|a, b| (&a.checkpoint_id, &a.spec_id).cmp(&(&b.checkpoint_id, &b.spec_id)));
        out
    }
}

/// Summaries for every spec of `plan` from its satisfaction records.
pub fn summarize(
    plan: &ProbePlan,
    partition: &TestPartition,
    records: &[SatisfactionRecord],
) -> Result<Vec<SignalSummary>, SignalError> {
    let mut acc = SignalAccumulator::new(plan, partition);
    for r in records {
        acc.push(r)?;
    }
    Ok(acc.finish())
}

fn ratio_over(records: &[SatisfactionRecord], spec_id: &str) -> Option<Fraction> {
    let (reached, holds) = records
        .iter()
        .filter(|r| r.spec_id == spec_id && r.reached)
        .fold((0u64, 0u64), |(n, h), r| {
            (n + 1, h + u64::from(r.holds == Some(true)))
        });
    (reached > 0).then(|| Fraction::new(holds, reached))
}

/// Alpha of `spec_id` over records drawn from passing tests.
pub fn compute_alpha(passing_records: &[SatisfactionRecord], spec_id: &str) -> Option<Fraction> {
    ratio_over(passing_records, spec_id)
}

/// Beta of `spec_id` over records drawn from failing tests.
pub fn compute_beta(failing_records: &[SatisfactionRecord], spec_id: &str) -> Option<Fraction> {
    ratio_over(failing_records, spec_id)
}

/// Why a spec was left out of the refined set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    /// No passing test reaches the checkpoint, alpha is undefined.
    NoPassingReach,
    /// No failing test reaches the checkpoint, beta is undefined.
    NoFailingReach,
    NonConsistent,
    Trivial,
    ErrorHeavy,
}

/// Which filters are active. The default is the full alpha/beta filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    pub thresholds: Thresholds,
    pub use_alpha: bool,
    pub use_beta: bool,
    pub exclude_error_heavy: bool,
}

impl SelectionPolicy {
    pub fn new(thresholds: Thresholds) -> Self {
        Self {
            thresholds,
            use_alpha: true,
            use_beta: true,
            exclude_error_heavy: false,
        }
    }

    pub fn judge(&self, s: &SignalSummary) -> Result<(), Exclusion> {
        if self.exclude_error_heavy && s.error_heavy() {
            return Err(Exclusion::ErrorHeavy);
        }
        if self.use_alpha {
            match s.alpha_meets(self.thresholds.theta) {
                None => return Err(Exclusion::NoPassingReach),
                Some(false) => return Err(Exclusion::NonConsistent),
                Some(true) => {}
            }
        }
        if self.use_beta {
            match s.beta_below(self.thresholds.gamma) {
                None => return Err(Exclusion::NoFailingReach),
                Some(false) => return Err(Exclusion::Trivial),
                Some(true) => {}
            }
        }
        Ok(())
    }

    /// Selected spec ids ordered by (checkpoint, spec).
    pub fn select(&self, summaries: &[SignalSummary]) -> Vec<String> {
        let mut picked: Vec<&SignalSummary> =
            summaries.iter().filter(|s| self.judge(s).is_ok()).collect();
        picked.sort_by(|a, b| (&a.checkpoint_id, &a.spec_id).cmp(&(&b.checkpoint_id, &b.spec_id)));
        picked.into_iter().map(|s| s.spec_id.clone()).collect()
    }
}

/// The refined set: alpha defined and >= theta, beta defined and < gamma.
pub fn select_specs(summaries: &[SignalSummary], thresholds: Thresholds) -> Vec<String> {
    SelectionPolicy::new(thresholds).select(summaries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    NonConsistent,
    Trivial,
    Acceptable,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::NonConsistent, Region::Trivial, Region::Acceptable];

    pub fn name(self) -> &'static str {
        match self {
            Region::NonConsistent => "non_consistent",
            Region::Trivial => "trivial",
            Region::Acceptable => "acceptable",
        }
    }
}

pub fn classify_region(s: &SignalSummary, thresholds: Thresholds) -> Result<Region, SignalError> {
    let undefined = || SignalError::Undefined(s.spec_id.clone());
    let consistent = s.alpha_meets(thresholds.theta).ok_or_else(undefined)?;
    let discriminative = s.beta_below(thresholds.gamma).ok_or_else(undefined)?;
    Ok(match (consistent, discriminative) {
        (false, _) => Region::NonConsistent,
        (true, false) => Region::Trivial,
        (true, true) => Region::Acceptable,
    })
}

/// Estimated alpha minus reference alpha.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeltaAlpha {
    pub delta: Ratio<i128>,
    /// `|delta| < 0.1`
    pub highly_consistent: bool,
}

impl DeltaAlpha {
    pub fn as_f64(&self) -> f64 {
        *self.delta.numer() as f64 / *self.delta.denom() as f64
    }
}

pub fn delta_alpha(alpha_est: Fraction, alpha_ref: Fraction) -> DeltaAlpha {
    let signed = |f: Fraction| Ratio::new(*f.numer() as i128, *f.denom() as i128);
    let delta = signed(alpha_est) - signed(alpha_ref);
    let highly_consistent = delta.abs() < Ratio::new(1, 10);
    DeltaAlpha {
        delta,
        highly_consistent,
    }
}

/// Delta-alpha for every spec that has both an estimate and a reference.
pub fn delta_alpha_for(
    summaries: &[SignalSummary],
    reference_records: &[SatisfactionRecord],
) -> BTreeMap<String, Result<DeltaAlpha, SignalError>> {
    summaries
        .iter()
        .filter_map(|s| {
            let est = s.alpha_fraction()?;
            let result = compute_alpha(reference_records, &s.spec_id)
                .map(|r| delta_alpha(est, r))
                .ok_or_else(|| SignalError::MissingReference(s.spec_id.clone()));
            Some((s.spec_id.clone(), result))
        })
        .collect()
}
