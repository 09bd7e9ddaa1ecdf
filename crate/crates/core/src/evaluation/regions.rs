use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::signals::{classify_region, Region, SignalSummary, Thresholds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionDistribution {
    pub theta: f64,
    pub gamma: f64,
    /// Specs with both signals defined.
    pub classified: usize,
    /// Specs skipped because alpha or beta is undefined.
    pub undefined: usize,
    pub counts: BTreeMap<Region, usize>,
    pub percentages: BTreeMap<Region, f64>,
}

impl RegionDistribution {
    pub fn pct(&self, r: Region) -> f64 {
        self.percentages.get(&r).copied().unwrap_or(0.0)
    }
}

pub fn region_distribution(
    summaries: &[SignalSummary],
    thresholds: Thresholds,
) -> Result<RegionDistribution, EvalError> {
    let mut counts: BTreeMap<Region, usize> = Region::ALL.iter().map(|r| (*r, 0)).collect();
    let mut undefined = 0;
    for s in summaries {
        match classify_region(s, thresholds) {
            Ok(r) => *counts.entry(r).or_default() += 1,
            Err(_) => undefined += 1,
        }
    }
    let classified: usize = counts.values().sum();
    if classified == 0 {
        return Err(EvalError::Empty("region distribution"));
    }
    let percentages = counts
        .iter()
        .map(|(r, c)| (*r, 100.0 * *c as f64 / classified as f64))
        .collect();
    Ok(RegionDistribution {
        theta: thresholds.theta.as_f64(),
        gamma: thresholds.gamma.as_f64(),
        classified,
        undefined,
        counts,
        percentages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn th() -> Thresholds {
        Thresholds::parse("0.8", "0.8").unwrap()
    }

    #[test]
    fn all_trivial() {
        let s = vec![SignalSummary::from_counts("a", "c", (3, 3), (2, 2)); 4];
        let d = region_distribution(&s, th()).unwrap();
        assert_eq!(d.pct(Region::Trivial), 100.0);
        assert_eq!(d.counts[&Region::Acceptable], 0);
    }

    #[test]
    fn one_per_region_and_undefined_skipped() {
        let s = vec![
            SignalSummary::from_counts("n", "c", (2, 0), (2, 0)),
            SignalSummary::from_counts("t", "c", (2, 2), (2, 2)),
            SignalSummary::from_counts("a", "c", (2, 2), (2, 0)),
            SignalSummary::from_counts("u", "c", (0, 0), (2, 0)),
        ];
        let d = region_distribution(&s, th()).unwrap();
        for r in Region::ALL {
            assert!((d.pct(r) - 100.0 / 3.0).abs() < 1e-9);
        }
        assert_eq!(d.undefined, 1);
        assert!(region_distribution(&s[3..], th()).is_err());
        assert!(region_distribution(&[], th()).is_err());
    }
}
