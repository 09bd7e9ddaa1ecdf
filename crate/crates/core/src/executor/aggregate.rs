use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ExecError;
use crate::trace::{Outcome, ProbePlan, TraceEvent};

/// Per-(spec, test) verdict folded from all visits of the spec's checkpoint.
///
/// `holds` is `None` when the test never reached the checkpoint. A test
/// holds only if every visit was satisfied; an evaluation error counts as
/// a violation and sets `any_error`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SatisfactionRecord {
    pub spec_id: String,
    pub test_id: String,
    pub reached: bool,
    pub holds: Option<bool>,
    pub any_error: bool,
    pub visits: u32,
}

impl SatisfactionRecord {
    pub fn unreached(spec_id: &str, test_id: &str) -> Self {
        Self {
            spec_id: spec_id.to_owned(),
            test_id: test_id.to_owned(),
            reached: false,
            holds: None,
            any_error: false,
            visits: 0,
        }
    }
}

#[derive(Default)]
struct Fold<'a> {
    checkpoint: &'a str,
    visits: u32,
    max_visit: u32,
    all_sat: bool,
    any_error: bool,
}

/// Folds per-visit events into per-test records, sorted by (spec, test).
///
/// The fold is order independent. Duplicate observations, a spec seen at
/// two checkpoints, or gaps in visit indices are integrity errors.
pub fn aggregate(events: &[TraceEvent]) -> Result<Vec<SatisfactionRecord>, ExecError> {
    let mut seen = BTreeSet::new();
    let mut folds: BTreeMap<(&str, &str), Fold<'_>> = BTreeMap::new();
    let mut spec_checkpoint: BTreeMap<&str, &str> = BTreeMap::new();

    for e in events {
        let key = (
            e.test_id.as_str(),
            e.checkpoint_id.as_str(),
            e.visit_index,
            e.spec_id.as_str(),
        );
        if !seen.insert(key) {
            return Err(ExecError::Integrity(format!(
                "duplicate event for test `{}` checkpoint `{}` visit {} spec `{}`",
                e.test_id, e.checkpoint_id, e.visit_index, e.spec_id
            )));
        }
        let cp = *spec_checkpoint
            .entry(e.spec_id.as_str())
            .or_insert(e.checkpoint_id.as_str());
        if cp != e.checkpoint_id {
            return Err(ExecError::Integrity(format!(
                "spec `{}` observed at checkpoints `{}` and `{}`",
                e.spec_id, cp, e.checkpoint_id
            )));
        }
        let fold = folds
            .entry((e.spec_id.as_str(), e.test_id.as_str()))
            .or_insert_with(|| Fold {
                checkpoint: cp,
                all_sat: true,
                ..Fold::default()
            });
        fold.visits += 1;
        fold.max_visit = fold.max_visit.max(e.visit_index);
        fold.all_sat &= e.outcome == Outcome::Satisfied;
        fold.any_error |= e.outcome == Outcome::Error;
    }

    folds
        .into_iter()
        .map(|((spec, test), f)| {
            if f.max_visit + 1 != f.visits {
                return Err(ExecError::Integrity(format!(
                    "visit indices for test `{test}` spec `{spec}` at `{}` are not contiguous",
                    f.checkpoint
                )));
            }
            Ok(SatisfactionRecord {
                spec_id: spec.to_owned(),
                test_id: test.to_owned(),
                reached: true,
                holds: Some(f.all_sat),
                any_error: f.any_error,
                visits: f.visits,
            })
        })
        .collect()
}

/// One record for every (plan spec, listed test) pair, filling in
/// unreached pairs. Events for tests or specs outside the lists are ignored.
pub fn records_for_plan(
    plan: &ProbePlan,
    test_ids: &[&str],
    events: &[TraceEvent],
) -> Result<Vec<SatisfactionRecord>, ExecError> {
    let reached: BTreeMap<(String, String), SatisfactionRecord> = aggregate(events)?
        .into_iter()
        .map(|r| ((r.spec_id.clone(), r.test_id.clone()), r))
        .collect();
    let mut out = Vec::with_capacity(plan.specs.len() * test_ids.len());
    for spec in &plan.specs {
        for test in test_ids {
            let key = (spec.id.clone(), (*test).to_owned());
            out.push(
                reached
                    .get(&key)
                    .cloned()
                    .unwrap_or_else(|| SatisfactionRecord::unreached(&spec.id, test)),
            );
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(test: &str, visit: u32, spec: &str, outcome: Outcome) -> TraceEvent {
        TraceEvent {
            test_id: test.into(),
            checkpoint_id: "c".into(),
            visit_index: visit,
            spec_id: spec.into(),
            outcome,
            error_note: (outcome == Outcome::Error).then(|| "boom".to_owned()),
        }
    }

    fn fold(outcomes: &[Outcome]) -> SatisfactionRecord {
        let events: Vec<_> = outcomes
            .iter()
            .enumerate()
            .map(|(i, o)| ev("t", i as u32, "s", *o))
            .collect();
        aggregate(&events).unwrap().remove(0)
    }

    #[test]
    fn all_visits_rule() {
        use Outcome::*;
        let r = fold(&[Satisfied, Satisfied, Satisfied]);
        assert!(r.reached);
        assert_eq!(r.holds, Some(true));
        assert_eq!(r.visits, 3);

        assert_eq!(fold(&[Satisfied, Violated, Satisfied]).holds, Some(false));

        let r = fold(&[Satisfied, Error]);
        assert_eq!(r.holds, Some(false));
        assert!(r.any_error);
    }

    #[test]
    fn duplicates_and_gaps_are_rejected() {
        let dup = vec![
            ev("t", 0, "s", Outcome::Satisfied),
            ev("t", 0, "s", Outcome::Satisfied),
        ];
        assert!(matches!(aggregate(&dup), Err(ExecError::Integrity(_))));
        let gap = vec![
            ev("t", 0, "s", Outcome::Satisfied),
            ev("t", 2, "s", Outcome::Satisfied),
        ];
        assert!(matches!(aggregate(&gap), Err(ExecError::Integrity(_))));
        let mut moved = ev("u", 0, "s", Outcome::Satisfied);
        moved.checkpoint_id = "other".into();
        let split = vec![ev("t", 0, "s", Outcome::Satisfied), moved];
        assert!(matches!(aggregate(&split), Err(ExecError::Integrity(_))));
    }

    #[test]
    fn unreached_pairs_are_filled() {
        let plan: ProbePlan = serde_json::from_str(
            r#"{"checkpoints":[{"id":"c","after_line":1}],
                "specs":[{"id":"s","checkpoint":"c","expr":"True"}]}"#,
        )
        .unwrap();
        let records =
            records_for_plan(&plan, &["t", "u"], &[ev("t", 0, "s", Outcome::Satisfied)]).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1], SatisfactionRecord::unreached("s", "u"));
    }

    fn arb_outcome() -> impl Strategy<Value = Outcome> {
        prop_oneof![
            Just(Outcome::Satisfied),
            Just(Outcome::Violated),
            Just(Outcome::Error)
        ]
    }

    proptest! {
        #[test]
        fn aggregation_is_order_independent(
            runs in prop::collection::vec((0u8..4, 0u8..3, prop::collection::vec(arb_outcome(), 1..5)), 1..12),
            seed in any::<u64>(),
        ) {
            let mut events = Vec::new();
            let mut used = BTreeSet::new();
            for (t, s, outcomes) in runs {
                if !used.insert((t, s)) { continue; }
                for (i, o) in outcomes.into_iter().enumerate() {
                    events.push(ev(&format!("t{t}"), i as u32, &format!("s{s}"), o));
                }
            }
            let expected = aggregate(&events).unwrap();
            // deterministic shuffle driven by the seed
            let mut shuffled = events.clone();
            let mut state = seed | 1;
            for i in (1..shuffled.len()).rev() {
                state ^= state << 13; state ^= state >> 7; state ^= state << 17;
                shuffled.swap(i, (state % (i as u64 + 1)) as usize);
            }
            prop_assert_eq!(aggregate(&shuffled).unwrap(), expected);
        }
    }
}
