use std::sync::Arc;

use proptest::prelude::*;
use soaguard_core::monitor::{MonitorConfig, PolicySnapshot};
use soaguard_core::policy::RouteSelection;
use soaguard_core::risk::{AfrMode, RiskState};
use soaguard_core::{
    load_model, parse_srm, BehaviorElements, Blacklist, ConsumerId, ConsumerKey, KeyHash, Millis,
    Monitor, Reason, Target, Thresholds, Uri, Verdict,
};

const MODEL: &str = "\
service S0 system /SBA/0.jsp
service S1 sensitive /SBA/X0.jsp
service S2 system /SBA/1.jsp
service S3 sensitive /SBA/X1.jsp
service S4 sensitive /SBA/X2.jsp
transition t1 S0 S1
transition t2 S0 S2
transition t3 S2 S3
transition t4 S2 S4
initial S0
";

const URIS: [&str; 6] = [
    "/SBA/0.jsp",
    "/SBA/X0.jsp",
    "/SBA/1.jsp",
    "/SBA/X1.jsp",
    "/SBA/X2.jsp",
    "/elsewhere",
];

fn key(c: &str) -> ConsumerKey {
    ConsumerKey::new(format!("K{c}").into_bytes())
}

fn monitor(thresholds: Thresholds) -> Monitor {
    let model = Arc::new(load_model(MODEL).unwrap());
    let mut doc = String::new();
    for (c, released) in [("C0", "S1,S3"), ("C1", "S1"), ("C2", "S4")] {
        let h = KeyHash::with_salt(&key(c), [9; 16]);
        doc += &format!("rule {c} {h} t -> {released}\n");
    }
    let srm = parse_srm(&doc, &model).unwrap();
    let policy = PolicySnapshot::compile(model, srm, RouteSelection::Shortest).unwrap();
    let config = MonitorConfig { thresholds, ..MonitorConfig::default() };
    Monitor::new(config, policy, Blacklist::in_memory()).unwrap()
}

fn open(mon: &Monitor, c: &str) -> soaguard_core::Session {
    let target = Target::new("t").unwrap();
    mon.open_session(&ConsumerId::new(c).unwrap(), &key(c), &target, Millis(0)).unwrap()
}

fn el(c: &str, src: usize, dst: usize, t: u64) -> BehaviorElements {
    BehaviorElements {
        id: ConsumerId::new(c).unwrap(),
        src: Uri::new(URIS[src]).unwrap(),
        dst: Uri::new(URIS[dst]).unwrap(),
        timestamp: Millis(t),
    }
}

/// Requests as (src index, dst index, gap to previous in ms).
fn requests() -> impl Strategy<Value = Vec<(usize, usize, u64)>> {
    proptest::collection::vec((0usize..6, 0usize..6, prop_oneof![0u64..5, 0u64..400]), 1..120)
}

fn small_thresholds() -> impl Strategy<Value = Thresholds> {
    (
        proptest::option::weighted(0.8, 1u32..20),
        proptest::option::weighted(0.8, 1u32..60),
    )
        .prop_map(|(u, a)| Thresholds {
            uar_max: u.map(f64::from),
            afr_max: a.map(f64::from),
            ..Thresholds::default()
        })
}

proptest! {
    #[test]
    fn termination_is_absorbing(th in small_thresholds(), reqs in requests()) {
        let mon = monitor(th);
        let mut s = open(&mon, "C0");
        let mut t = 0;
        let mut ended = false;
        for (src, dst, gap) in reqs {
            t += gap;
            let before = s.risk().clone();
            let d = mon.decide(&mut s, &el("C0", src, dst, t)).unwrap();
            if ended {
                prop_assert_eq!((d.verdict, d.reason), (Verdict::DenyRequest, Reason::SessionTerminated));
                prop_assert_eq!(s.risk(), &before);
                prop_assert!(d.permit.is_none());
            }
            if matches!(d.verdict, Verdict::TerminateSession | Verdict::Blacklisted) {
                ended = true;
                prop_assert!(!s.is_active());
            }
        }
    }

    /// Replays the decision procedure on a shadow risk state.
    #[test]
    fn decisions_follow_shadow_state(th in small_thresholds(), reqs in requests()) {
        let mon = monitor(th);
        let mut s = open(&mon, "C0");
        let mut shadow = RiskState::<f64>::new(Millis(0), th.afr_window_ms, AfrMode::Windowed);
        let allowed = |src: usize, dst: usize| {
            let pairs = [(0, 0), (0, 1), (1, 1), (0, 2), (2, 2), (2, 3), (3, 3)];
            pairs.contains(&(src, dst))
        };
        let mut t = 0;
        let mut active = true;
        for (src, dst, gap) in reqs {
            t += gap;
            let d = mon.decide(&mut s, &el("C0", src, dst, t)).unwrap();
            if !active {
                prop_assert_eq!(d.reason, Reason::SessionTerminated);
                continue;
            }
            let matched = allowed(src, dst);
            shadow.update_afr(Millis(t)).unwrap();
            shadow.update_arr(Millis(t)).unwrap();
            shadow.update_uar(matched);
            let uar = th.uar_max.is_some_and(|m| shadow.uar() as f64 > m);
            let afr = th.afr_max.is_some_and(|m| shadow.afr() > m);
            let expected = match (uar, afr) {
                (true, true) => (Verdict::Blacklisted, Reason::BothExceeded),
                (true, false) => (Verdict::TerminateSession, Reason::UarExceeded),
                (false, true) => (Verdict::TerminateSession, Reason::AfrExceeded),
                (false, false) if !matched => (Verdict::DenyRequest, Reason::TbmMismatch),
                _ => (Verdict::Allow, Reason::Ok),
            };
            prop_assert_eq!((d.verdict, d.reason), expected);
            prop_assert_eq!(d.permit.is_some(), d.verdict == Verdict::Allow);
            prop_assert_eq!(mon.blacklist_contains(s.consumer()).unwrap(), uar && afr);
            if uar || afr {
                active = false;
            }
        }
        let summary = mon.summary(&s);
        prop_assert_eq!(summary.allowed + summary.denied, summary.requests);
    }

    #[test]
    fn sessions_are_isolated(th in small_thresholds(), a in requests(), b in requests()) {
        let trace = |mon: &Monitor, s: &mut soaguard_core::Session, c: &str, reqs: &[(usize, usize, u64)]| {
            let mut t = 0;
            reqs.iter()
                .map(|&(src, dst, gap)| {
                    t += gap;
                    let d = mon.decide(s, &el(c, src, dst, t)).unwrap();
                    (d.verdict, d.reason)
                })
                .collect::<Vec<_>>()
        };
        let alone = monitor(th);
        let expect_a = trace(&alone, &mut open(&alone, "C0"), "C0", &a);
        let expect_b = trace(&alone, &mut open(&alone, "C1"), "C1", &b);

        let shared = monitor(th);
        let mut sa = open(&shared, "C0");
        let mut sb = open(&shared, "C1");
        let (mut got_a, mut got_b) = (Vec::new(), Vec::new());
        let (mut ta, mut tb) = (0, 0);
        for i in 0..a.len().max(b.len()) {
            if let Some(&(src, dst, gap)) = a.get(i) {
                ta += gap;
                let d = shared.decide(&mut sa, &el("C0", src, dst, ta)).unwrap();
                got_a.push((d.verdict, d.reason));
            }
            if let Some(&(src, dst, gap)) = b.get(i) {
                tb += gap;
                let d = shared.decide(&mut sb, &el("C1", src, dst, tb)).unwrap();
                got_b.push((d.verdict, d.reason));
            }
        }
        prop_assert_eq!(got_a, expect_a);
        prop_assert_eq!(got_b, expect_b);
    }

    #[test]
    fn replay_is_deterministic(th in small_thresholds(), reqs in requests()) {
        let run = || {
            let mon = monitor(th);
            let mut s = open(&mon, "C2");
            let mut t = 0;
            let decisions: Vec<_> = reqs
                .iter()
                .map(|&(src, dst, gap)| {
                    t += gap;
                    mon.decide(&mut s, &el("C2", src, dst, t)).unwrap()
                })
                .collect();
            (decisions, s.risk().clone())
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn decide_is_total_on_arbitrary_uris(
        src in "/[a-zA-Z0-9._/-]{0,24}",
        dst in "/[a-zA-Z0-9._/-]{0,24}",
        who in 0u8..3,
        back in 0u64..3,
    ) {
        let mon = monitor(Thresholds::default());
        let mut s = open(&mon, "C0");
        mon.decide(&mut s, &el("C0", 0, 0, 10)).unwrap();
        let elements = BehaviorElements {
            id: ConsumerId::new(format!("C{who}")).unwrap(),
            src: Uri::new(src).unwrap(),
            dst: Uri::new(dst).unwrap(),
            timestamp: Millis(10 - back * 5),
        };
        match mon.decide(&mut s, &elements) {
            Ok(d) => prop_assert_eq!(d.permit.is_some(), d.verdict == Verdict::Allow),
            Err(e) => prop_assert!(who != 0 || back > 0, "unexpected {}", e),
        }
    }
}
