//! Per-session behavior risk accounting.
//!
//! Three risks are tracked for every session:
//!
//! * UAR, unauthorized access risk: the number of requests that matched no
//!   trusted behavior rule.
//! * ARR, access retention risk: time elapsed in the session, accumulated
//!   request by request.
//! * AFR, access frequency risk: request rate in requests per minute.
//!
//! A risk is turned into an evaluation `1 - threshold / risk` and the
//! evaluation into an evidence bit that is set iff the risk strictly exceeds
//! its threshold.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Uri;
use crate::policy::ConsumerId;
use crate::scalar::Scalar;

const MS_PER_MINUTE: u64 = 60_000;

fn default_window() -> u64 {
    MS_PER_MINUTE
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RiskError {
    #[error("clock went backwards: last observation at {last} ms, now {now} ms")]
    ClockRegression { last: u64, now: u64 },
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
}

/// Monotonic time in milliseconds.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Millis(pub u64);

impl Millis {
    pub fn from_secs(secs: u64) -> Self {
        Millis(secs * 1000)
    }

    pub fn saturating_sub(self, earlier: Millis) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl fmt::Display for Millis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

/// What the check point observed for one request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorElements {
    pub id: ConsumerId,
    pub src: Uri,
    pub dst: Uri,
    pub timestamp: Millis,
}

/// How the access frequency is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AfrMode {
    /// Requests inside a trailing window, scaled to one minute.
    #[default]
    Windowed,
    /// Difference quotient between two consecutive requests.
    TwoPoint,
}

/// Risk thresholds. `None` disables the corresponding evidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds<S = f64> {
    /// Maximum tolerated count of unauthorized requests.
    pub uar_max: Option<S>,
    /// Maximum tolerated rate, requests per minute.
    pub afr_max: Option<S>,
    /// Maximum tolerated session age, seconds.
    pub arr_max: Option<S>,
    /// Length of the trailing window the rate is measured over.
    #[serde(default = "default_window")]
    pub afr_window_ms: u64,
}

impl<S: Scalar> Default for Thresholds<S> {
    fn default() -> Self {
        Self {
            uar_max: Some(S::from_count(1000)),
            afr_max: Some(S::from_count(350)),
            arr_max: Some(S::from_count(3600)),
            afr_window_ms: MS_PER_MINUTE,
        }
    }
}

impl<S: Scalar> Thresholds<S> {
    /// Every evidence switched off; only trusted-behavior matching applies.
    pub fn disabled() -> Self {
        Self {
            uar_max: None,
            afr_max: None,
            arr_max: None,
            afr_window_ms: MS_PER_MINUTE,
        }
    }

    pub fn validate(&self) -> Result<(), RiskError> {
        for (name, value) in [
            ("uar_max", self.uar_max),
            ("afr_max", self.afr_max),
            ("arr_max", self.arr_max),
        ] {
            if let Some(v) = value {
                if v.is_nan() || v <= S::zero() {
                    return Err(RiskError::InvalidThresholds(format!(
                        "{name} must be strictly positive, got {v}"
                    )));
                }
            }
        }
        if self.afr_window_ms == 0 {
            return Err(RiskError::InvalidThresholds(
                "afr_window must be strictly positive".into(),
            ));
        }
        Ok(())
    }
}

/// Risk evaluation `1 - threshold / risk`.
///
/// Zero risk yields negative infinity; it can never exceed a positive
/// threshold. The value is computed as `(risk - threshold) / risk`, which has
/// the same sign as `risk - threshold` in floating point.
pub fn evaluate<S: Scalar>(risk: S, threshold: S) -> S {
    debug_assert!(threshold > S::zero());
    if risk.is_nan() || risk <= S::zero() {
        return S::neg_infinity();
    }
    if risk.is_infinite() {
        return S::one();
    }
    (risk - threshold) / risk
}

/// Evidence bit for an evaluation: set iff the evaluation is positive.
pub fn evidence<S: Scalar>(evaluation: S) -> bool {
    evaluation > S::zero()
}

fn evidence_for<S: Scalar>(risk: S, threshold: Option<S>) -> bool {
    threshold.is_some_and(|t| evidence(evaluate(risk, t)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub uar: bool,
    pub afr: bool,
    pub arr: bool,
}

impl Evidence {
    pub fn any_enforced(&self, arr_enforced: bool) -> bool {
        self.uar || self.afr || (arr_enforced && self.arr)
    }
}

/// Accumulators for one consumer session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskState<S = f64> {
    uar: u64,
    arr_ms: u64,
    afr: S,
    session_start: Millis,
    last_timestamp: Millis,
    access_count: u64,
    request_log: VecDeque<u64>,
    afr_window_ms: u64,
    afr_mode: AfrMode,
}

impl<S: Scalar> RiskState<S> {
    /// Fresh state for a session starting at `start`.
    pub fn new(start: Millis, afr_window_ms: u64, afr_mode: AfrMode) -> Self {
        assert!(afr_window_ms > 0, "afr window must be positive");
        Self {
            uar: 0,
            arr_ms: 0,
            afr: S::zero(),
            session_start: start,
            last_timestamp: start,
            access_count: 0,
            request_log: VecDeque::new(),
            afr_window_ms,
            afr_mode,
        }
    }

    pub fn uar(&self) -> u64 {
        self.uar
    }

    /// Accumulated retention in milliseconds (exact).
    pub fn arr_ms(&self) -> u64 {
        self.arr_ms
    }

    pub fn arr_seconds(&self) -> S {
        S::from_count(self.arr_ms) / S::from_count(1000)
    }

    /// Current access frequency, requests per minute.
    pub fn afr(&self) -> S {
        self.afr
    }

    pub fn access_count(&self) -> u64 {
        self.access_count
    }

    pub fn session_start(&self) -> Millis {
        self.session_start
    }

    pub fn last_timestamp(&self) -> Millis {
        self.last_timestamp
    }

    pub fn request_log(&self) -> impl Iterator<Item = Millis> + '_ {
        self.request_log.iter().copied().map(Millis)
    }

    pub fn afr_mode(&self) -> AfrMode {
        self.afr_mode
    }

    /// Unchanged on a trusted request, plus one otherwise.
    pub fn update_uar(&mut self, matched: bool) {
        if !matched {
            self.uar += 1;
        }
    }

    /// Adds the time elapsed since the previous observation.
    pub fn update_arr(&mut self, now: Millis) -> Result<(), RiskError> {
        self.check_clock(now)?;
        self.arr_ms += now.0 - self.last_timestamp.0;
        self.last_timestamp = now;
        Ok(())
    }

    /// Records a request at `now` and recomputes the access frequency.
    pub fn update_afr(&mut self, now: Millis) -> Result<(), RiskError> {
        self.check_clock(now)?;
        self.access_count += 1;
        match self.afr_mode {
            AfrMode::Windowed => {
                self.request_log.push_back(now.0);
                // keep (now - window, now]
                while let Some(&oldest) = self.request_log.front() {
                    if oldest + self.afr_window_ms <= now.0 {
                        self.request_log.pop_front();
                    } else {
                        break;
                    }
                }
                self.afr = S::from_count(self.request_log.len() as u64) * S::from_count(MS_PER_MINUTE)
                    / S::from_count(self.afr_window_ms);
            }
            AfrMode::TwoPoint => {
                // gaps are floored at the 1 ms clock resolution
                self.afr = match self.request_log.back() {
                    None => S::zero(),
                    Some(&prev) => {
                        S::from_count(MS_PER_MINUTE) / S::from_count((now.0 - prev).max(1))
                    }
                };
                self.request_log.clear();
                self.request_log.push_back(now.0);
            }
        }
        Ok(())
    }

    fn check_clock(&self, now: Millis) -> Result<(), RiskError> {
        let last = self
            .request_log
            .back()
            .copied()
            .unwrap_or(0)
            .max(self.last_timestamp.0);
        if now.0 < last {
            return Err(RiskError::ClockRegression { last, now: now.0 });
        }
        Ok(())
    }

    pub fn evidence(&self, thresholds: &Thresholds<S>) -> Evidence {
        Evidence {
            uar: evidence_for(S::from_count(self.uar), thresholds.uar_max),
            afr: evidence_for(self.afr, thresholds.afr_max),
            arr: evidence_for(self.arr_seconds(), thresholds.arr_max),
        }
    }

    pub fn snapshot(
        &self,
        consumer: &ConsumerId,
        session: u64,
        thresholds: &Thresholds<S>,
    ) -> RiskSnapshot {
        let ev = self.evidence(thresholds);
        RiskSnapshot {
            consumer: consumer.clone(),
            session,
            uar: self.uar,
            arr_s: self.arr_seconds().to_f64_lossy(),
            afr_per_min: self.afr.to_f64_lossy(),
            pf_uar: ev.uar,
            pf_afr: ev.afr,
            pf_arr: ev.arr,
        }
    }
}

/// Exported view of a session's risks.
///
/// `Display` renders the metrics log line
/// `risk consumer=<id> session=<n> uar=<c> arr_s=<s> afr_per_min=<r> pf_uar=<b> pf_afr=<b>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSnapshot {
    pub consumer: ConsumerId,
    pub session: u64,
    pub uar: u64,
    pub arr_s: f64,
    pub afr_per_min: f64,
    pub pf_uar: bool,
    pub pf_afr: bool,
    pub pf_arr: bool,
}

impl fmt::Display for RiskSnapshot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "risk consumer={} session={} uar={} arr_s={:.3} afr_per_min={:.3} pf_uar={} pf_afr={}",
            self.consumer,
            self.session,
            self.uar,
            self.arr_s,
            self.afr_per_min,
            u8::from(self.pf_uar),
            u8::from(self.pf_afr),
        )
    }
}
