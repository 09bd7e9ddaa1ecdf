use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use proptest::prelude::*;
use specrepair_core::corpus::{partition_tests, FailReason, TestCase, TestPartition, Verdict};
use specrepair_core::evaluation::{
    cohen_kappa, pass_at_k, pass_at_k_exact, win_draw_rates, JudgeOutcome, Preference,
};
use specrepair_core::executor::{aggregate, SatisfactionRecord};
use specrepair_core::signals::{
    classify_region, select_specs, summarize, Region, SelectionPolicy, SignalSummary, Threshold,
    Thresholds,
};
use specrepair_core::trace::{Checkpoint, Outcome, ProbePlan, SpecDef, TraceEvent};

const SPECS: usize = 4;
const TESTS: usize = 8;

fn plan() -> ProbePlan {
    ProbePlan {
        checkpoints: vec![
            Checkpoint {
                id: "c0".into(),
                after_line: 1,
                scope: None,
            },
            Checkpoint {
                id: "c1".into(),
                after_line: 2,
                scope: None,
            },
        ],
        specs: (0..SPECS)
            .map(|i| SpecDef {
                id: format!("s{i}"),
                checkpoint: format!("c{}", i % 2),
                expr: "True".into(),
            })
            .collect(),
    }
}

fn outcome() -> impl Strategy<Value = Outcome> {
    prop_oneof![
        4 => Just(Outcome::Satisfied),
        2 => Just(Outcome::Violated),
        1 => Just(Outcome::Error),
    ]
}

/// Events for every (spec, test): a checkpoint visit count per test and an
/// outcome per visit.
fn events() -> impl Strategy<Value = Vec<TraceEvent>> {
    let per_test = prop::collection::vec(
        (0u32..4).prop_flat_map(|v| prop::collection::vec(outcome(), (v as usize) * SPECS)),
        TESTS,
    );
    per_test.prop_map(|tests| {
        let mut out = Vec::new();
        for (t, outcomes) in tests.iter().enumerate() {
            for (k, o) in outcomes.iter().enumerate() {
                let spec = k % SPECS;
                out.push(TraceEvent {
                    test_id: format!("t{t}"),
                    checkpoint_id: format!("c{}", spec % 2),
                    visit_index: (k / SPECS) as u32,
                    spec_id: format!("s{spec}"),
                    outcome: *o,
                    error_note: (*o == Outcome::Error).then(|| "boom".into()),
                });
            }
        }
        out
    })
}

fn partition_of(mask: u8) -> TestPartition {
    let mut p = TestPartition::default();
    for t in 0..TESTS {
        let id = format!("t{t}");
        if mask & (1 << t) != 0 {
            p.passing.insert(id);
        } else {
            p.failing.insert(id);
        }
    }
    p
}

fn summary() -> impl Strategy<Value = SignalSummary> {
    (0u64..12, 0u64..12).prop_flat_map(|(pr, fr)| {
        (0..=pr, 0..=fr)
            .prop_map(move |(ph, fh)| SignalSummary::from_counts("s", "c", (pr, ph), (fr, fh)))
    })
}

fn threshold() -> impl Strategy<Value = Threshold> {
    (0u64..=100).prop_map(|n| Threshold::new(Ratio::new(n, 100)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn partition_covers_suite_disjointly(verdicts in prop::collection::vec(any::<bool>(), 0..12)) {
        let tests: Vec<TestCase> = (0..verdicts.len())
            .map(|i| TestCase { id: format!("t{i}"), input: vec![], expected_output: vec![] })
            .collect();
        let map: BTreeMap<String, Verdict> = verdicts
            .iter()
            .enumerate()
            .map(|(i, ok)| (format!("t{i}"), if *ok { Verdict::Pass } else { Verdict::Fail(FailReason::WrongOutput) }))
            .collect();
        let p = partition_tests(&tests, &map).unwrap();
        prop_assert_eq!(p.passing.len() + p.failing.len(), tests.len());
        prop_assert!(p.passing.is_disjoint(&p.failing));
        prop_assert_eq!(p, partition_tests(&tests, &map).unwrap());
    }

    #[test]
    fn aggregation_ignores_event_order(evs in events(), seed in any::<u64>()) {
        let mut shuffled = evs.clone();
        // deterministic Fisher-Yates driven by the seed
        let mut x = seed | 1;
        for i in (1..shuffled.len()).rev() {
            x ^= x << 13; x ^= x >> 7; x ^= x << 17;
            shuffled.swap(i, (x % (i as u64 + 1)) as usize);
        }
        prop_assert_eq!(aggregate(&evs).unwrap(), aggregate(&shuffled).unwrap());
    }

    #[test]
    fn record_fields_are_consistent(evs in events()) {
        for r in aggregate(&evs).unwrap() {
            prop_assert!(r.reached && r.visits > 0);
            if r.any_error {
                prop_assert_eq!(r.holds, Some(false));
            }
            let visits: Vec<&TraceEvent> = evs
                .iter()
                .filter(|e| e.spec_id == r.spec_id && e.test_id == r.test_id)
                .collect();
            prop_assert_eq!(visits.len() as u32, r.visits);
            let all_sat = visits.iter().all(|e| e.outcome == Outcome::Satisfied);
            prop_assert_eq!(r.holds, Some(all_sat));
        }
    }

    #[test]
    fn summaries_match_a_naive_recount(evs in events(), mask in any::<u8>()) {
        let partition = partition_of(mask);
        let records = aggregate(&evs).unwrap();
        let summaries = summarize(&plan(), &partition, &records).unwrap();
        prop_assert_eq!(summaries.len(), SPECS);
        for s in &summaries {
            let mine: Vec<&SatisfactionRecord> =
                records.iter().filter(|r| r.spec_id == s.spec_id && r.reached).collect();
            let count = |side: &BTreeSet<String>, holds: bool| {
                mine.iter()
                    .filter(|r| side.contains(&r.test_id) && (!holds || r.holds == Some(true)))
                    .count() as u64
            };
            prop_assert_eq!(s.pass_reached, count(&partition.passing, false));
            prop_assert_eq!(s.pass_holds, count(&partition.passing, true));
            prop_assert_eq!(s.fail_reached, count(&partition.failing, false));
            prop_assert_eq!(s.fail_holds, count(&partition.failing, true));
            prop_assert_eq!(s.alpha.is_some(), s.pass_reached > 0);
            if let Some(a) = s.alpha {
                prop_assert!((0.0..=1.0).contains(&a));
                prop_assert_eq!(a, s.pass_holds as f64 / s.pass_reached as f64);
            }
            if let Some(b) = s.beta {
                prop_assert!((0.0..=1.0).contains(&b));
                prop_assert_eq!(b, s.fail_holds as f64 / s.fail_reached as f64);
            }
        }
    }

    #[test]
    fn selection_shrinks_as_thresholds_tighten(
        sums in prop::collection::vec(summary(), 1..12),
        t1 in threshold(), t2 in threshold(), g1 in threshold(), g2 in threshold(),
    ) {
        let sums: Vec<SignalSummary> = sums
            .into_iter()
            .enumerate()
            .map(|(i, mut s)| { s.spec_id = format!("s{i}"); s })
            .collect();
        let (lo_t, hi_t) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let (lo_g, hi_g) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let loose: BTreeSet<String> = select_specs(&sums, Thresholds::new(lo_t, hi_g)).into_iter().collect();
        let tight: BTreeSet<String> = select_specs(&sums, Thresholds::new(hi_t, lo_g)).into_iter().collect();
        prop_assert!(tight.is_subset(&loose));
    }

    #[test]
    fn acceptable_region_is_the_selected_set(s in summary(), theta in threshold(), gamma in threshold()) {
        let t = Thresholds::new(theta, gamma);
        let selected = !select_specs(std::slice::from_ref(&s), t).is_empty();
        match classify_region(&s, t) {
            Ok(r) => prop_assert_eq!(r == Region::Acceptable, selected),
            Err(_) => {
                prop_assert!(s.alpha.is_none() || s.beta.is_none());
                prop_assert!(!selected);
            }
        }
    }

    #[test]
    fn tautologies_never_survive(pr in 1u64..20, fr in 1u64..20, gamma in threshold()) {
        let s = SignalSummary::from_counts("s", "c", (pr, pr), (fr, fr));
        prop_assert_eq!(s.beta, Some(1.0));
        let t = Thresholds::new(Threshold::new(Ratio::from_integer(0)).unwrap(), gamma);
        prop_assert!(select_specs(&[s], t).is_empty());
    }

    #[test]
    fn ablation_switches_are_independent(s in summary(), theta in threshold(), gamma in threshold()) {
        let t = Thresholds::new(theta, gamma);
        let alpha_ok = s.pass_reached > 0 && Ratio::new(s.pass_holds, s.pass_reached) >= theta.value();
        let beta_ok = s.fail_reached > 0 && Ratio::new(s.fail_holds, s.fail_reached) < gamma.value();
        let pick = |use_alpha, use_beta| {
            SelectionPolicy { use_alpha, use_beta, ..SelectionPolicy::new(t) }.judge(&s).is_ok()
        };
        prop_assert_eq!(pick(true, true), alpha_ok && beta_ok);
        prop_assert_eq!(pick(false, true), beta_ok);
        prop_assert_eq!(pick(true, false), alpha_ok);
        prop_assert!(pick(false, false));
    }

    #[test]
    fn pass_at_k_is_monotone(n in 1u64..40, c_frac in 0.0f64..=1.0, k_frac in 0.0f64..1.0) {
        let c = ((n as f64) * c_frac).floor() as u64;
        let k = 1 + ((n - 1) as f64 * k_frac).floor() as u64;
        let here = pass_at_k_exact(n, c, k).unwrap();
        if k < n {
            prop_assert!(pass_at_k_exact(n, c, k + 1).unwrap() >= here);
        }
        if c < n {
            prop_assert!(pass_at_k_exact(n, c + 1, k).unwrap() >= here);
        }
        let f = pass_at_k(n, c, k).unwrap();
        let exact = num_traits::ToPrimitive::to_f64(&here).unwrap();
        prop_assert!((f - exact).abs() < 1e-9);
    }

    #[test]
    fn win_draw_rates_sum_to_one(prefs in prop::collection::vec(0u8..3, 1..50)) {
        let outcomes: Vec<JudgeOutcome> = prefs
            .iter()
            .enumerate()
            .map(|(i, p)| JudgeOutcome {
                bug_id: format!("b{i}"),
                preferred: [Preference::Treatment, Preference::Baseline, Preference::Draw][*p as usize],
            })
            .collect();
        let r = win_draw_rates(&outcomes).unwrap();
        prop_assert_eq!(r.win_treatment + r.win_baseline + r.draw, Ratio::from_integer(1));
    }

    #[test]
    fn kappa_is_symmetric_and_label_blind(
        pairs in prop::collection::vec((0u8..3, 0u8..3), 2..40),
        perm in Just([0u8, 1, 2]).prop_shuffle(),
    ) {
        let a: Vec<u8> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<u8> = pairs.iter().map(|p| p.1).collect();
        let relabel = |v: &[u8]| v.iter().map(|x| perm[*x as usize]).collect::<Vec<_>>();
        match (cohen_kappa(&a, &b), cohen_kappa(&b, &a), cohen_kappa(&relabel(&a), &relabel(&b))) {
            (Ok(x), Ok(y), Ok(z)) => {
                prop_assert_eq!(x.kappa, y.kappa);
                prop_assert_eq!(x.kappa, z.kappa);
            }
            (Err(_), Err(_), Err(_)) => {}
            other => prop_assert!(false, "inconsistent results: {:?}", other),
        }
    }
}
