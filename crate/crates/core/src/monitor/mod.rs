//! Behavior-aware access control.
//!
//! The monitor authenticates consumers against the releasing model, binds
//! each session to the consumer's compiled trusted behavior model and decides
//! every request:
//!
//! 1. a terminated session denies everything;
//! 2. the request is matched against the model and all risks are updated,
//!    whether it matched or not;
//! 3. UAR and AFR evidence together blacklist the consumer;
//! 4. a single evidence terminates the session;
//! 5. an unmatched request is denied, the session stays active;
//! 6. otherwise the request is allowed.

mod blacklist;

pub use blacklist::{unix_ms_now, BanEntry, Blacklist, BlacklistError};

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{SoaModel, Uri};
use crate::policy::{
    compile_tbm, ConsumerId, ConsumerKey, PolicyError, RouteSelection, Srm, Target, Tbm,
};
use crate::risk::{AfrMode, BehaviorElements, Millis, RiskError, RiskSnapshot, RiskState, Thresholds};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Allow,
    DenyRequest,
    TerminateSession,
    Blacklisted,
}

impl Verdict {
    /// Value of the `X-Decision` response header.
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Allow => "allow",
            Verdict::DenyRequest => "deny",
            Verdict::TerminateSession => "terminated",
            Verdict::Blacklisted => "blacklisted",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Reason {
    Ok,
    TbmMismatch,
    UarExceeded,
    AfrExceeded,
    ArrExceeded,
    BothExceeded,
    SessionTerminated,
    NotAuthenticated,
    OnBlacklist,
}

impl Reason {
    pub const ALL: [Reason; 9] = [
        Reason::Ok,
        Reason::TbmMismatch,
        Reason::UarExceeded,
        Reason::AfrExceeded,
        Reason::ArrExceeded,
        Reason::BothExceeded,
        Reason::SessionTerminated,
        Reason::NotAuthenticated,
        Reason::OnBlacklist,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Reason::Ok => "Ok",
            Reason::TbmMismatch => "TbmMismatch",
            Reason::UarExceeded => "UarExceeded",
            Reason::AfrExceeded => "AfrExceeded",
            Reason::ArrExceeded => "ArrExceeded",
            Reason::BothExceeded => "BothExceeded",
            Reason::SessionTerminated => "SessionTerminated",
            Reason::NotAuthenticated => "NotAuthenticated",
            Reason::OnBlacklist => "OnBlacklist",
        }
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Reason {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Reason::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown reason `{s}`"))
    }
}

/// Token proving a request was allowed by the monitor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Permit(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub verdict: Verdict,
    pub reason: Reason,
    pub permit: Option<Permit>,
}

impl Decision {
    fn allow(permit: Permit) -> Self {
        Self {
            verdict: Verdict::Allow,
            reason: Reason::Ok,
            permit: Some(permit),
        }
    }

    fn deny(verdict: Verdict, reason: Reason) -> Self {
        debug_assert!(verdict != Verdict::Allow && reason != Reason::Ok);
        Self {
            verdict,
            reason,
            permit: None,
        }
    }

    pub fn is_allow(&self) -> bool {
        self.verdict == Verdict::Allow
    }
}

/// One line of the decision log:
/// `decision consumer=<id> session=<n> src=<uri> dst=<uri> verdict=<v> reason=<r> latency_us=<n>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionRecord<'a> {
    pub consumer: &'a ConsumerId,
    pub session: SessionId,
    pub src: &'a Uri,
    pub dst: &'a Uri,
    pub decision: Decision,
    pub latency_us: u64,
}

impl fmt::Display for DecisionRecord<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "decision consumer={} session={} src={} dst={} verdict={} reason={} latency_us={}",
            self.consumer,
            self.session,
            self.src,
            self.dst,
            self.decision.verdict,
            self.decision.reason,
            self.latency_us
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SessionId(pub u64);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Terminated,
}

#[derive(Debug, Clone)]
pub struct Session<S: Scalar = f64> {
    id: SessionId,
    consumer: ConsumerId,
    target: Target,
    tbm: Arc<Tbm>,
    risk: RiskState<S>,
    status: SessionStatus,
    started_at: Millis,
    last_activity: Millis,
    allowed: u64,
    denied: u64,
}

impl<S: Scalar> Session<S> {
    pub fn id(&self) -> SessionId {
        self.id
    }

    pub fn consumer(&self) -> &ConsumerId {
        &self.consumer
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    pub fn tbm(&self) -> &Tbm {
        &self.tbm
    }

    pub fn risk(&self) -> &RiskState<S> {
        &self.risk
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn is_active(&self) -> bool {
        self.status == SessionStatus::Active
    }

    pub fn started_at(&self) -> Millis {
        self.started_at
    }

    pub fn last_activity(&self) -> Millis {
        self.last_activity
    }

    /// Whether no request arrived for longer than `timeout_ms` before `now`.
    pub fn is_idle(&self, now: Millis, timeout_ms: u64) -> bool {
        now.saturating_sub(self.last_activity) > timeout_ms
    }

    fn terminate(&mut self) {
        self.status = SessionStatus::Terminated;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSummary {
    pub session: SessionId,
    pub consumer: ConsumerId,
    pub requests: u64,
    pub allowed: u64,
    pub denied: u64,
    pub risk: RiskSnapshot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum Refused {
    #[error("consumer is blacklisted")]
    OnBlacklist,
    #[error("authentication failed")]
    NotAuthenticated,
}

impl Refused {
    pub fn reason(self) -> Reason {
        match self {
            Refused::OnBlacklist => Reason::OnBlacklist,
            Refused::NotAuthenticated => Reason::NotAuthenticated,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MonitorError {
    #[error(transparent)]
    Refused(#[from] Refused),
    #[error("elements of consumer `{found}` submitted to a session of `{expected}`")]
    ForeignSessionElements { expected: ConsumerId, found: ConsumerId },
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Store(#[from] BlacklistError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig<S = f64> {
    pub thresholds: Thresholds<S>,
    pub afr_mode: AfrMode,
    /// Adds ARR evidence as a third session-termination trigger.
    pub arr_enforce: bool,
    pub idle_timeout_ms: u64,
    pub routes: RouteSelection,
}

impl<S: Scalar> Default for MonitorConfig<S> {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            afr_mode: AfrMode::Windowed,
            arr_enforce: false,
            idle_timeout_ms: 30 * 60 * 1000,
            routes: RouteSelection::Shortest,
        }
    }
}

/// Model, releasing rules and the compiled trusted behavior models,
/// swapped in as one unit.
#[derive(Debug, Clone)]
pub struct PolicySnapshot {
    model: Arc<SoaModel>,
    srm: Srm,
    tbms: HashMap<(ConsumerId, Target), Arc<Tbm>>,
}

impl PolicySnapshot {
    pub fn compile(
        model: Arc<SoaModel>,
        srm: Srm,
        routes: RouteSelection,
    ) -> Result<Self, PolicyError> {
        srm.validate(&model)?;
        let tbms = srm
            .rules()
            .iter()
            .map(|r| {
                let tbm = compile_tbm(r, &model, routes)?;
                Ok(((r.consumer.clone(), r.target.clone()), Arc::new(tbm)))
            })
            .collect::<Result<_, PolicyError>>()?;
        Ok(Self { model, srm, tbms })
    }

    pub fn model(&self) -> &Arc<SoaModel> {
        &self.model
    }

    pub fn srm(&self) -> &Srm {
        &self.srm
    }

    pub fn tbm(&self, consumer: &ConsumerId, target: &Target) -> Option<&Arc<Tbm>> {
        self.tbms.get(&(consumer.clone(), target.clone()))
    }

    /// Replaces the model of one `(consumer, target)` pair, e.g. with an
    /// appended or padded one. The pair must have a releasing rule.
    pub fn with_tbm(&self, tbm: Tbm) -> Result<Self, PolicyError> {
        let target = tbm.target().cloned().ok_or_else(|| {
            PolicyError::Validation("replacement model must name its target".into())
        })?;
        let key = (tbm.consumer().clone(), target);
        if self.srm.rule_for(&key.0, &key.1).is_none() {
            return Err(PolicyError::Validation(format!(
                "no releasing rule for consumer `{}` and target `{}`",
                key.0, key.1
            )));
        }
        let mut next = self.clone();
        next.tbms.insert(key, Arc::new(tbm));
        Ok(next)
    }
}

pub struct Monitor<S: Scalar = f64> {
    config: MonitorConfig<S>,
    policy: RwLock<Arc<PolicySnapshot>>,
    blacklist: Blacklist,
    next_session: AtomicU64,
    next_permit: AtomicU64,
}

impl<S: Scalar> fmt::Debug for Monitor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Monitor")
            .field("config", &self.config)
            .field("blacklist", &self.blacklist)
            .finish_non_exhaustive()
    }
}

impl<S: Scalar> Monitor<S> {
    pub fn new(
        config: MonitorConfig<S>,
        policy: PolicySnapshot,
        blacklist: Blacklist,
    ) -> Result<Self, MonitorError> {
        config.thresholds.validate()?;
        Ok(Self {
            config,
            policy: RwLock::new(Arc::new(policy)),
            blacklist,
            next_session: AtomicU64::new(1),
            next_permit: AtomicU64::new(1),
        })
    }

    pub fn config(&self) -> &MonitorConfig<S> {
        &self.config
    }

    pub fn thresholds(&self) -> &Thresholds<S> {
        &self.config.thresholds
    }

    pub fn blacklist(&self) -> &Blacklist {
        &self.blacklist
    }

    pub fn policy(&self) -> Arc<PolicySnapshot> {
        self.policy.read().clone()
    }

    /// Installs a new policy. Open sessions keep the model they were bound to.
    pub fn install_policy(&self, policy: PolicySnapshot) {
        *self.policy.write() = Arc::new(policy);
    }

    pub fn replace_tbm(&self, tbm: Tbm) -> Result<(), MonitorError> {
        let mut guard = self.policy.write();
        let next = guard.with_tbm(tbm)?;
        *guard = Arc::new(next);
        Ok(())
    }

    pub fn blacklist_contains(&self, consumer: &ConsumerId) -> Result<bool, MonitorError> {
        Ok(self.blacklist.contains(consumer)?)
    }

    /// Authenticates and opens a fresh session starting at `now`.
    pub fn open_session(
        &self,
        consumer: &ConsumerId,
        key: &ConsumerKey,
        target: &Target,
        now: Millis,
    ) -> Result<Session<S>, MonitorError> {
        if self.blacklist.contains(consumer)? {
            return Err(Refused::OnBlacklist.into());
        }
        let policy = self.policy();
        let rule = policy
            .srm()
            .authenticate(consumer, key, target)
            .map_err(|_| Refused::NotAuthenticated)?;
        let tbm = policy
            .tbm(&rule.consumer, &rule.target)
            .cloned()
            .ok_or(Refused::NotAuthenticated)?;
        let id = SessionId(self.next_session.fetch_add(1, Ordering::Relaxed));
        Ok(Session {
            id,
            consumer: consumer.clone(),
            target: target.clone(),
            tbm,
            risk: RiskState::new(now, self.config.thresholds.afr_window_ms, self.config.afr_mode),
            status: SessionStatus::Active,
            started_at: now,
            last_activity: now,
            allowed: 0,
            denied: 0,
        })
    }

    /// Decides one request of `session`.
    pub fn decide(
        &self,
        session: &mut Session<S>,
        elements: &BehaviorElements,
    ) -> Result<Decision, MonitorError> {
        if elements.id != session.consumer {
            return Err(MonitorError::ForeignSessionElements {
                expected: session.consumer.clone(),
                found: elements.id.clone(),
            });
        }
        let decision = self.decide_inner(session, elements);
        match &decision {
            Ok(d) if d.is_allow() => session.allowed += 1,
            _ => session.denied += 1,
        }
        decision
    }

    fn decide_inner(
        &self,
        session: &mut Session<S>,
        elements: &BehaviorElements,
    ) -> Result<Decision, MonitorError> {
        if !session.is_active() {
            return Ok(Decision::deny(Verdict::DenyRequest, Reason::SessionTerminated));
        }
        // banned through another session of the same consumer
        if self.blacklist.contains_cached(&session.consumer) {
            session.terminate();
            return Ok(Decision::deny(Verdict::Blacklisted, Reason::OnBlacklist));
        }

        let matched = session.tbm.matches(
            elements.id.as_str(),
            elements.src.as_str(),
            elements.dst.as_str(),
        );
        let risk = &mut session.risk;
        risk.update_afr(elements.timestamp)?;
        risk.update_arr(elements.timestamp)?;
        risk.update_uar(matched);
        session.last_activity = elements.timestamp;

        let ev = session.risk.evidence(&self.config.thresholds);
        if ev.uar && ev.afr {
            session.terminate();
            self.blacklist.add(&session.consumer, Reason::BothExceeded)?;
            return Ok(Decision::deny(Verdict::Blacklisted, Reason::BothExceeded));
        }
        let single = if ev.uar {
            Some(Reason::UarExceeded)
        } else if ev.afr {
            Some(Reason::AfrExceeded)
        } else if self.config.arr_enforce && ev.arr {
            Some(Reason::ArrExceeded)
        } else {
            None
        };
        if let Some(reason) = single {
            session.terminate();
            return Ok(Decision::deny(Verdict::TerminateSession, reason));
        }
        if !matched {
            return Ok(Decision::deny(Verdict::DenyRequest, Reason::TbmMismatch));
        }
        Ok(Decision::allow(Permit(
            self.next_permit.fetch_add(1, Ordering::Relaxed),
        )))
    }

    /// Ends the session. Closing twice yields the same summary.
    pub fn close_session(&self, session: &mut Session<S>) -> SessionSummary {
        session.terminate();
        self.summary(session)
    }

    pub fn summary(&self, session: &Session<S>) -> SessionSummary {
        SessionSummary {
            session: session.id,
            consumer: session.consumer.clone(),
            requests: session.allowed + session.denied,
            allowed: session.allowed,
            denied: session.denied,
            risk: session
                .risk
                .snapshot(&session.consumer, session.id.0, &self.config.thresholds),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::parse_srm;
    use crate::policy::tests::{key, model, table_1};

    fn cid(s: &str) -> ConsumerId {
        ConsumerId::new(s).unwrap()
    }

    fn target(s: &str) -> Target {
        Target::new(s).unwrap()
    }

    fn uri(s: &str) -> Uri {
        Uri::new(s).unwrap()
    }

    fn monitor(thresholds: Thresholds<f64>) -> Monitor<f64> {
        let m = Arc::new(model());
        let srm = parse_srm(&table_1(), &m).unwrap();
        let policy = PolicySnapshot::compile(m, srm, RouteSelection::Shortest).unwrap();
        let config = MonitorConfig { thresholds, ..MonitorConfig::default() };
        Monitor::new(config, policy, Blacklist::in_memory()).unwrap()
    }

    fn el(id: &str, src: &str, dst: &str, t: u64) -> BehaviorElements {
        BehaviorElements { id: cid(id), src: uri(src), dst: uri(dst), timestamp: Millis(t) }
    }

    #[test]
    fn opens_sessions() {
        let mon = monitor(Thresholds::default());
        let s = mon.open_session(&cid("C0"), &key("CK0"), &target("cardiopathy"), Millis(0)).unwrap();
        assert_eq!(s.tbm().len(), 7);
        assert!(s.is_active());
        assert_eq!(s.risk().uar(), 0);

        let err = mon
            .open_session(&cid("C1"), &key("CK1"), &target("cardiopathy"), Millis(0))
            .unwrap_err();
        assert_eq!(err, MonitorError::Refused(Refused::NotAuthenticated));

        mon.blacklist().add(&cid("C0"), Reason::BothExceeded).unwrap();
        let err = mon
            .open_session(&cid("C0"), &key("CK0"), &target("cardiopathy"), Millis(0))
            .unwrap_err();
        assert_eq!(err, MonitorError::Refused(Refused::OnBlacklist));
    }

    #[test]
    fn allows_trusted_request() {
        let mon = monitor(Thresholds::default());
        let mut s = mon.open_session(&cid("C0"), &key("CK0"), &target("cardiopathy"), Millis(0)).unwrap();
        let d = mon.decide(&mut s, &el("C0", "/SBA/0.jsp", "/SBA/X0.jsp", 10)).unwrap();
        assert_eq!((d.verdict, d.reason), (Verdict::Allow, Reason::Ok));
        assert!(d.permit.is_some());
    }

    #[test]
    fn uar_boundary_then_termination() {
        let mon = monitor(Thresholds { afr_max: None, ..Thresholds::default() });
        let mut s = mon.open_session(&cid("C1"), &key("CK1"), &target("influenza"), Millis(0)).unwrap();
        let bad = |t| el("C1", "/SBA/0.jsp", "/SBA/1.jsp", t);
        for t in 0..999 {
            let d = mon.decide(&mut s, &bad(t)).unwrap();
            assert_eq!(d.reason, Reason::TbmMismatch);
        }
        assert_eq!(s.risk().uar(), 999);
        let d = mon.decide(&mut s, &bad(999)).unwrap();
        assert_eq!((d.verdict, d.reason), (Verdict::DenyRequest, Reason::TbmMismatch));
        assert_eq!(s.risk().uar(), 1000);
        let d = mon.decide(&mut s, &bad(1000)).unwrap();
        assert_eq!((d.verdict, d.reason), (Verdict::TerminateSession, Reason::UarExceeded));
        assert_eq!(s.risk().uar(), 1001);
        let good = el("C1", "/SBA/0.jsp", "/SBA/X0.jsp", 1001);
        let d = mon.decide(&mut s, &good).unwrap();
        assert_eq!((d.verdict, d.reason), (Verdict::DenyRequest, Reason::SessionTerminated));
        // risk is frozen once terminated
        assert_eq!(s.risk().uar(), 1001);

        let mut fresh = mon.open_session(&cid("C1"), &key("CK1"), &target("influenza"), Millis(2000)).unwrap();
        let good = el("C1", "/SBA/0.jsp", "/SBA/X0.jsp", 2001);
        assert!(mon.decide(&mut fresh, &good).unwrap().is_allow());
    }

    #[test]
    fn both_evidences_blacklist() {
        let th = Thresholds { uar_max: Some(5.0), afr_max: Some(5.0), ..Thresholds::default() };
        let mon = monitor(th);
        let mut s = mon.open_session(&cid("C0"), &key("CK0"), &target("cardiopathy"), Millis(0)).unwrap();
        let mut last = None;
        for t in 0..6 {
            last = Some(mon.decide(&mut s, &el("C0", "/SBA/0.jsp", "/nowhere", t)).unwrap());
        }
        let d = last.unwrap();
        assert_eq!((d.verdict, d.reason), (Verdict::Blacklisted, Reason::BothExceeded));
        assert!(mon.blacklist_contains(&cid("C0")).unwrap());
        let d = mon.decide(&mut s, &el("C0", "/SBA/0.jsp", "/SBA/0.jsp", 7)).unwrap();
        assert_eq!(d.reason, Reason::SessionTerminated);
    }

    #[test]
    fn parallel_session_sees_ban() {
        let th = Thresholds { uar_max: Some(1.0), afr_max: Some(1.0), ..Thresholds::default() };
        let mon = monitor(th);
        let mut a = mon.open_session(&cid("C0"), &key("CK0"), &target("cardiopathy"), Millis(0)).unwrap();
        let mut b = mon.open_session(&cid("C0"), &key("CK0"), &target("cardiopathy"), Millis(0)).unwrap();
        for t in 0..2 {
            mon.decide(&mut a, &el("C0", "/x", "/y", t)).unwrap();
        }
        assert!(!a.is_active());
        let d = mon.decide(&mut b, &el("C0", "/SBA/0.jsp", "/SBA/0.jsp", 3)).unwrap();
        assert_eq!((d.verdict, d.reason), (Verdict::Blacklisted, Reason::OnBlacklist));
        assert!(!b.is_active());
    }

    #[test]
    fn afr_alone_terminates() {
        let th = Thresholds { afr_max: Some(3.0), ..Thresholds::default() };
        let mon = monitor(th);
        let mut s = mon.open_session(&cid("C0"), &key("CK0"), &target("cardiopathy"), Millis(0)).unwrap();
        let ok = |t| el("C0", "/SBA/0.jsp", "/SBA/0.jsp", t);
        for t in 0..3 {
            assert!(mon.decide(&mut s, &ok(t)).unwrap().is_allow());
        }
        let d = mon.decide(&mut s, &ok(3)).unwrap();
        assert_eq!((d.verdict, d.reason), (Verdict::TerminateSession, Reason::AfrExceeded));
        assert!(!mon.blacklist_contains(&cid("C0")).unwrap());
    }

    #[test]
    fn arr_only_enforced_on_request() {
        let th = Thresholds { arr_max: Some(1.0), ..Thresholds::default() };
        let mon = monitor(th);
        let mut s = mon.open_session(&cid("C0"), &key("CK0"), &target("cardiopathy"), Millis(0)).unwrap();
        let ok = |t| el("C0", "/SBA/0.jsp", "/SBA/0.jsp", t);
        assert!(mon.decide(&mut s, &ok(5_000)).unwrap().is_allow());

        let m = Arc::new(model());
        let srm = parse_srm(&table_1(), &m).unwrap();
        let policy = PolicySnapshot::compile(m, srm, RouteSelection::Shortest).unwrap();
        let config = MonitorConfig { thresholds: th, arr_enforce: true, ..MonitorConfig::default() };
        let mon = Monitor::new(config, policy, Blacklist::in_memory()).unwrap();
        let mut s = mon.open_session(&cid("C0"), &key("CK0"), &target("cardiopathy"), Millis(0)).unwrap();
        let d = mon.decide(&mut s, &ok(5_000)).unwrap();
        assert_eq!(d.reason, Reason::ArrExceeded);
    }

    #[test]
    fn foreign_elements_and_clock_regression() {
        let mon = monitor(Thresholds::default());
        let mut s = mon.open_session(&cid("C0"), &key("CK0"), &target("cardiopathy"), Millis(100)).unwrap();
        let err = mon.decide(&mut s, &el("C1", "/SBA/0.jsp", "/SBA/0.jsp", 200)).unwrap_err();
        assert!(matches!(err, MonitorError::ForeignSessionElements { .. }));
        let err = mon.decide(&mut s, &el("C0", "/SBA/0.jsp", "/SBA/0.jsp", 50)).unwrap_err();
        assert!(matches!(err, MonitorError::Risk(RiskError::ClockRegression { .. })));
    }

    #[test]
    fn summaries() {
        let mon = monitor(Thresholds::default());
        let mut s = mon.open_session(&cid("C0"), &key("CK0"), &target("cardiopathy"), Millis(0)).unwrap();
        let first = mon.close_session(&mut s);
        assert_eq!((first.requests, first.allowed, first.denied), (0, 0, 0));

        let mut s = mon.open_session(&cid("C0"), &key("CK0"), &target("cardiopathy"), Millis(0)).unwrap();
        for t in 0..10 {
            mon.decide(&mut s, &el("C0", "/SBA/0.jsp", "/SBA/X0.jsp", t)).unwrap();
        }
        for t in 10..12 {
            mon.decide(&mut s, &el("C0", "/SBA/0.jsp", "/SBA/X2.jsp", t)).unwrap();
        }
        let a = mon.close_session(&mut s);
        assert_eq!((a.allowed, a.denied, a.requests), (10, 2, 12));
        let b = mon.close_session(&mut s);
        assert_eq!(a, b);
    }

    #[test]
    fn replacing_a_tbm_affects_new_sessions_only() {
        let mon = monitor(Thresholds::default());
        let old = mon.open_session(&cid("C1"), &key("CK1"), &target("influenza"), Millis(0)).unwrap();
        let mut tbm = (*mon.policy().tbm(&cid("C1"), &target("influenza")).unwrap().clone()).clone();
        tbm.append_rules([crate::policy::TrustedBehaviorRule::new(cid("C1"), uri("/p"), uri("/q"))])
            .unwrap();
        mon.replace_tbm(tbm).unwrap();
        let new = mon.open_session(&cid("C1"), &key("CK1"), &target("influenza"), Millis(0)).unwrap();
        assert_eq!(old.tbm().len(), 3);
        assert_eq!(new.tbm().len(), 4);

        let stray = Tbm::new(cid("C9"), Some(target("influenza")));
        assert!(mon.replace_tbm(stray).is_err());
    }

    #[test]
    fn reasons_round_trip() {
        for r in Reason::ALL {
            assert_eq!(r.as_str().parse::<Reason>().unwrap(), r);
        }
    }

    #[test]
    fn decision_log_line() {
        let c = cid("C0");
        let (src, dst) = (uri("/SBA/0.jsp"), uri("/SBA/X0.jsp"));
        let rec = DecisionRecord {
            consumer: &c,
            session: SessionId(3),
            src: &src,
            dst: &dst,
            decision: Decision::deny(Verdict::DenyRequest, Reason::TbmMismatch),
            latency_us: 42,
        };
        assert_eq!(
            rec.to_string(),
            "decision consumer=C0 session=3 src=/SBA/0.jsp dst=/SBA/X0.jsp verdict=deny reason=TbmMismatch latency_us=42"
        );
    }
}
