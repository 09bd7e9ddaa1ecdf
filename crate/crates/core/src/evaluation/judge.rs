use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    Treatment,
    Baseline,
    Draw,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeOutcome {
    pub bug_id: String,
    pub preferred: Preference,
}

/// A fault-localization comparison for one bug.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeInstance {
    pub bug_id: String,
    pub treatment_lines: BTreeSet<u32>,
    pub baseline_lines: BTreeSet<u32>,
    /// Every compared model produced a correct repair for this bug.
    #[serde(default = "yes")]
    pub all_correct: bool,
}

fn yes() -> bool {
    true
}

/// Identical predicted line sets are a draw and never reach the judge.
pub fn adjudicate<E>(
    bug_id: &str,
    treatment_lines: &BTreeSet<u32>,
    baseline_lines: &BTreeSet<u32>,
    judge: impl FnOnce() -> Result<Preference, E>,
) -> Result<JudgeOutcome, E> {
    let preferred = if treatment_lines == baseline_lines {
        Preference::Draw
    } else {
        judge()?
    };
    Ok(JudgeOutcome {
        bug_id: bug_id.to_owned(),
        preferred,
    })
}

/// Keeps instances where all models repaired the bug, then adjudicates the
/// rest in order.
pub fn judge_instances<E>(
    instances: &[JudgeInstance],
    mut judge: impl FnMut(&JudgeInstance) -> Result<Preference, E>,
) -> Result<Vec<JudgeOutcome>, E> {
    instances
        .iter()
        .filter(|i| i.all_correct)
        .map(|i| {
            adjudicate(&i.bug_id, &i.treatment_lines, &i.baseline_lines, || {
                judge(i)
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WinDrawRates {
    pub win_treatment: Ratio<u64>,
    pub win_baseline: Ratio<u64>,
    pub draw: Ratio<u64>,
}

impl WinDrawRates {
    /// (treatment, baseline, draw) as percentages.
    pub fn percentages(&self) -> (f64, f64, f64) {
        let pct = |r: Ratio<u64>| 100.0 * *r.numer() as f64 / *r.denom() as f64;
        (
            pct(self.win_treatment),
            pct(self.win_baseline),
            pct(self.draw),
        )
    }
}

pub fn win_draw_rates(outcomes: &[JudgeOutcome]) -> Result<WinDrawRates, EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::Empty("win/draw rates"));
    }
    let total = outcomes.len() as u64;
    let count = |p: Preference| outcomes.iter().filter(|o| o.preferred == p).count() as u64;
    Ok(WinDrawRates {
        win_treatment: Ratio::new(count(Preference::Treatment), total),
        win_baseline: Ratio::new(count(Preference::Baseline), total),
        draw: Ratio::new(count(Preference::Draw), total),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Kappa {
    pub observed: Ratio<i128>,
    pub expected: Ratio<i128>,
    pub kappa: Ratio<i128>,
}

impl Kappa {
    pub fn value(&self) -> f64 {
        *self.kappa.numer() as f64 / *self.kappa.denom() as f64
    }
}

/// Cohen's kappa between two raters, in exact arithmetic.
pub fn cohen_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<Kappa, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::Empty("kappa"));
    }
    let n = a.len() as i128;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as i128;
    let mut margins: BTreeMap<&T, (i128, i128)> = BTreeMap::new();
    for x in a {
        margins.entry(x).or_default().0 += 1;
    }
    for y in b {
        margins.entry(y).or_default().1 += 1;
    }
    let chance: i128 = margins.values().map(|(ca, cb)| ca * cb).sum();
    let observed = Ratio::new(agree, n);
    let expected = Ratio::new(chance, n * n);
    let kappa = if chance == n * n {
        if agree == n {
            Ratio::from_integer(1)
        } else {
            return Err(EvalError::KappaUndefined);
        }
    } else {
        Ratio::new(agree * n - chance, n * n - chance)
    };
    Ok(Kappa {
        observed,
        expected,
        kappa,
    })
}
