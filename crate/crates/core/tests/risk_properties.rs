use proptest::prelude::*;
use soaguard_core::risk::{evaluate, evidence, AfrMode, Millis, RiskState, Thresholds};
use soaguard_core::Scalar;

fn sweep<S: Scalar>(theta: u64) {
    let t = S::from_count(theta);
    for r in 0..=10 * theta {
        let e = evidence(evaluate(S::from_count(r), t));
        assert_eq!(e, r > theta, "risk {r} threshold {theta}");
    }
}

#[test]
fn evidence_iff_strict_exceedance() {
    for theta in [1, 2, 7, 60, 350, 1000, 4096] {
        sweep::<f64>(theta);
        sweep::<f32>(theta);
    }
}

/// Non-decreasing timestamps from random gaps.
fn trace() -> impl Strategy<Value = Vec<u64>> {
    proptest::collection::vec(
        prop_oneof![Just(0u64), 0u64..50, 0u64..2_000, 0u64..90_000],
        1..200,
    )
    .prop_map(|gaps| {
        gaps.iter()
            .scan(0u64, |t, g| {
                *t += g;
                Some(*t)
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn windowed_afr_equals_recount(ts in trace(), window in prop_oneof![Just(60_000u64), 1u64..120_000]) {
        let mut state = RiskState::<f64>::new(Millis(0), window, AfrMode::Windowed);
        for (i, &now) in ts.iter().enumerate() {
            state.update_afr(Millis(now)).unwrap();
            let count = ts[..=i].iter().filter(|&&t| t + window > now).count();
            prop_assert_eq!(state.afr(), count as f64 * 60_000.0 / window as f64);
            prop_assert_eq!(state.request_log().count(), count);
        }
    }
}

proptest! {
    #[test]
    fn arr_telescopes(start in 0u64..1_000_000, ts in trace()) {
        let mut state = RiskState::<f64>::new(Millis(start), 60_000, AfrMode::Windowed);
        let mut arr_seen = 0;
        for &t in &ts {
            state.update_arr(Millis(start + t)).unwrap();
            prop_assert!(state.arr_ms() >= arr_seen);
            arr_seen = state.arr_ms();
        }
        prop_assert_eq!(state.arr_ms(), state.last_timestamp().0 - start);
        prop_assert_eq!(state.arr_ms(), ts.last().copied().unwrap());
    }

    #[test]
    fn uar_counts_mismatches(matches in proptest::collection::vec(any::<bool>(), 0..3000)) {
        let mut state = RiskState::<f32>::new(Millis(0), 60_000, AfrMode::Windowed);
        let mut last = 0;
        for &m in &matches {
            state.update_uar(m);
            prop_assert!(state.uar() >= last);
            if m {
                prop_assert_eq!(state.uar(), last);
            }
            last = state.uar();
        }
        prop_assert_eq!(state.uar(), matches.iter().filter(|m| !**m).count() as u64);
    }

    #[test]
    fn updates_commute_with_serialization(
        ts in trace(),
        matched in proptest::collection::vec(any::<bool>(), 200),
        cut in 0usize..200,
        mode in prop_oneof![Just(AfrMode::Windowed), Just(AfrMode::TwoPoint)],
    ) {
        let step = |s: &mut RiskState<f64>, i: usize, t: u64| {
            s.update_afr(Millis(t)).unwrap();
            s.update_arr(Millis(t)).unwrap();
            s.update_uar(matched[i]);
        };
        let mut direct = RiskState::<f64>::new(Millis(0), 60_000, mode);
        let mut resumed = direct.clone();
        let cut = cut.min(ts.len());
        for (i, &t) in ts.iter().enumerate() {
            step(&mut direct, i, t);
            if i < cut {
                step(&mut resumed, i, t);
            }
        }
        let json = serde_json::to_string(&resumed).unwrap();
        let mut resumed: RiskState<f64> = serde_json::from_str(&json).unwrap();
        for (i, &t) in ts.iter().enumerate().skip(cut) {
            step(&mut resumed, i, t);
        }
        let th = Thresholds::default();
        prop_assert_eq!(resumed.evidence(&th), direct.evidence(&th));
        prop_assert_eq!(resumed, direct);
    }
}
