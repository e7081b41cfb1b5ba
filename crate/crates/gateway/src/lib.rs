//! HTTP enforcement point in front of mock service interfaces.
//!
//! Every `GET` of a model URI is turned into behavior elements and decided by
//! the [`Monitor`]; only allowed requests reach the mock service. Sessions are
//! opened with `POST /auth` and identified by the `X-Consumer` and
//! `X-Session` headers.

pub mod config;
pub mod metrics;
pub mod mock;

use std::collections::{HashMap, HashSet};
use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::{Mutex, RwLock};
use rand::Rng;
use serde::{Deserialize, Serialize};
use soaguard_core::model::ModelError;
use soaguard_core::monitor::{
    BlacklistError, DecisionRecord, MonitorConfig, MonitorError, PolicySnapshot, Refused,
};
use soaguard_core::policy::{parse_tbm, PolicyError};
use soaguard_core::risk::RiskError;
use soaguard_core::{
    load_model, parse_srm, BehaviorElements, Blacklist, ConsumerId, ConsumerKey, Millis, Monitor,
    Reason, Session, SoaModel, Srm, Target, Uri, Verdict,
};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use tracing::{info, warn};

pub use config::{ClockMode, GatewayConfig};
pub use metrics::{Metrics, MetricsDocument, ServiceMetrics, VerdictCounts};
pub use mock::{MockService, MockServices};

pub const X_CONSUMER: &str = "x-consumer";
pub const X_SESSION: &str = "x-session";
/// Claimed source page. Honored only if the session already visited it.
pub const X_SOURCE: &str = "x-source";
/// Request timestamp in milliseconds, read in replay clock mode.
pub const X_REPLAY_MS: &str = "x-replay-ms";
pub const X_DECISION: &str = "x-decision";
pub const X_REASON: &str = "x-reason";
pub const X_LATENCY_US: &str = "x-latency-us";
pub const X_PERMIT: &str = "x-permit";

const RESERVED: [&str; 4] = ["/auth", "/metrics", "/healthz", "/admin/tbm"];

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Model { path: PathBuf, source: ModelError },
    #[error("{path}: {source}")]
    Policy { path: PathBuf, source: PolicyError },
    #[error("model uri `{0}` collides with a gateway endpoint")]
    ReservedPath(Uri),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error(transparent)]
    Blacklist(#[from] BlacklistError),
}

impl GatewayError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

/// Server-side state of one session.
#[derive(Debug)]
struct SessionEntry {
    session: Session,
    /// URIs this session was allowed to access, starting with the initial page.
    visited: HashSet<Uri>,
    last_uri: Uri,
}

#[derive(Debug)]
enum Clock {
    Monotonic(Instant),
    Replay,
}

pub struct Gateway {
    monitor: Monitor,
    model: Arc<SoaModel>,
    mocks: MockServices,
    metrics: Metrics,
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionEntry>>>>,
    clock: Clock,
    idle_timeout_ms: u64,
    admin: bool,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("monitor", &self.monitor)
            .field("sessions", &self.sessions.read().len())
            .finish_non_exhaustive()
    }
}

fn read(path: &Path) -> Result<String, GatewayError> {
    std::fs::read_to_string(path).map_err(|e| GatewayError::io(path, e))
}

impl Gateway {
    /// Loads model, releasing rules and ban store named by `config`.
    pub fn from_config(config: &GatewayConfig) -> Result<Self, GatewayError> {
        let model = load_model(&read(&config.model)?)
            .map_err(|source| GatewayError::Model { path: config.model.clone(), source })?;
        let srm = parse_srm(&read(&config.srm)?, &model)
            .map_err(|source| GatewayError::Policy { path: config.srm.clone(), source })?;
        let blacklist = match &config.blacklist {
            Some(path) => Blacklist::open(path)?,
            None => Blacklist::in_memory(),
        };
        Self::new(config, model, srm, blacklist)
    }

    /// Builds a gateway from already loaded policy. The file paths in
    /// `config` are ignored.
    pub fn new(
        config: &GatewayConfig,
        model: SoaModel,
        srm: Srm,
        blacklist: Blacklist,
    ) -> Result<Self, GatewayError> {
        if let Some((_, _, uri)) = model.services().find(|(_, _, u)| RESERVED.contains(&u.as_str())) {
            return Err(GatewayError::ReservedPath(uri.clone()));
        }
        let model = Arc::new(model);
        let policy = PolicySnapshot::compile(model.clone(), srm, config.routes)
            .map_err(|source| GatewayError::Policy { path: config.srm.clone(), source })?;
        let monitor_config = MonitorConfig {
            thresholds: config.thresholds,
            afr_mode: config.afr_mode,
            arr_enforce: config.arr_enforce,
            idle_timeout_ms: config.idle_timeout_ms,
            routes: config.routes,
        };
        let monitor = Monitor::new(monitor_config, policy, blacklist)?;
        Ok(Self {
            mocks: MockServices::new(&model, Duration::from_micros(config.mock_latency_us), false),
            metrics: Metrics::new(&model),
            monitor,
            model,
            sessions: RwLock::new(HashMap::new()),
            clock: match config.clock {
                ClockMode::Monotonic => Clock::Monotonic(Instant::now()),
                ClockMode::Replay => Clock::Replay,
            },
            idle_timeout_ms: config.idle_timeout_ms,
            admin: config.admin,
        })
    }

    /// Makes the mock services log every hit with its permit.
    pub fn recording_hits(mut self, latency: Duration) -> Self {
        self.mocks = MockServices::new(&self.model, latency, true);
        self
    }

    pub fn monitor(&self) -> &Monitor {
        &self.monitor
    }

    pub fn model(&self) -> &SoaModel {
        &self.model
    }

    pub fn mocks(&self) -> &MockServices {
        &self.mocks
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().len()
    }

    fn now(&self, headers: &HeaderMap) -> Result<Millis, &'static str> {
        match self.clock {
            Clock::Monotonic(start) => Ok(Millis(start.elapsed().as_millis() as u64)),
            Clock::Replay => headers
                .get(X_REPLAY_MS)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.parse().ok())
                .map(Millis)
                .ok_or("replay clock requires a numeric X-Replay-Ms header"),
        }
    }

    fn purge_idle(&self) {
        let Clock::Monotonic(_) = self.clock else { return };
        let Ok(now) = self.now(&HeaderMap::new()) else { return };
        self.sessions.write().retain(|_, entry| match entry.try_lock() {
            Some(e) => !e.session.is_idle(now, self.idle_timeout_ms),
            None => true,
        });
    }
}

pub fn router(gateway: Arc<Gateway>) -> Router {
    Router::new()
        .route("/auth", post(auth))
        .route("/metrics", get(metrics))
        .route("/healthz", get(|| async { "ok\n" }))
        .route("/admin/tbm", post(admin_tbm))
        .fallback(checkpoint)
        .with_state(gateway)
}

/// Serves until the listener fails.
pub async fn serve(gateway: Arc<Gateway>, listener: TcpListener) -> io::Result<()> {
    axum::serve(listener, router(gateway)).await
}

/// Binds `addr` and serves in a background task.
pub async fn spawn(
    gateway: Arc<Gateway>,
    addr: SocketAddr,
) -> io::Result<(SocketAddr, JoinHandle<io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((local, tokio::spawn(serve(gateway, listener))))
}

fn refusal(status: StatusCode, reason: Reason, message: &str) -> Response {
    let mut resp = (status, format!("{message}\n")).into_response();
    resp.headers_mut()
        .insert(X_REASON, HeaderValue::from_static(reason.as_str()));
    resp
}

fn bad_request(message: impl Into<String>) -> Response {
    (StatusCode::BAD_REQUEST, format!("{}\n", message.into())).into_response()
}

fn unavailable(err: impl std::fmt::Display) -> Response {
    warn!("monitor store unavailable: {err}");
    (StatusCode::SERVICE_UNAVAILABLE, "monitor store unavailable\n").into_response()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuthRequest {
    pub consumer: String,
    pub key: String,
    pub target: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuthResponse {
    pub session: String,
    pub session_id: u64,
}

async fn auth(State(gw): State<Arc<Gateway>>, headers: HeaderMap, body: Bytes) -> Response {
    let Ok(req) = serde_json::from_slice::<AuthRequest>(&body) else {
        return bad_request("expected JSON {consumer, key, target}");
    };
    let now = match gw.now(&headers) {
        Ok(now) => now,
        Err(msg) => return bad_request(msg),
    };
    let (Ok(consumer), Ok(target)) = (ConsumerId::new(&req.consumer), Target::new(&req.target))
    else {
        return refusal(StatusCode::UNAUTHORIZED, Reason::NotAuthenticated, "authentication failed");
    };
    let key = ConsumerKey::new(req.key.into_bytes());
    let session = match gw.monitor.open_session(&consumer, &key, &target, now) {
        Ok(s) => s,
        Err(MonitorError::Refused(Refused::OnBlacklist)) => {
            return refusal(StatusCode::FORBIDDEN, Reason::OnBlacklist, "consumer is blacklisted")
        }
        Err(MonitorError::Refused(Refused::NotAuthenticated)) => {
            return refusal(StatusCode::UNAUTHORIZED, Reason::NotAuthenticated, "authentication failed")
        }
        Err(e) => return unavailable(e),
    };
    gw.purge_idle();
    let token = format!("{:032x}", rand::rng().random::<u128>());
    let initial = gw.model.initial_uri().clone();
    let session_id = session.id().0;
    info!(consumer = %consumer, session = session_id, "session opened");
    let entry = SessionEntry {
        session,
        visited: HashSet::from([initial.clone()]),
        last_uri: initial,
    };
    gw.sessions.write().insert(token.clone(), Arc::new(Mutex::new(entry)));
    Json(AuthResponse { session: token, session_id }).into_response()
}

async fn metrics(State(gw): State<Arc<Gateway>>) -> Json<MetricsDocument> {
    Json(gw.metrics.document())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TbmUploaded {
    pub consumer: ConsumerId,
    pub target: Target,
    pub rules: usize,
}

async fn admin_tbm(State(gw): State<Arc<Gateway>>, body: String) -> Response {
    if !gw.admin {
        return StatusCode::NOT_FOUND.into_response();
    }
    let tbm = match parse_tbm(&body) {
        Ok(t) => t,
        Err(e) => return bad_request(e.to_string()),
    };
    let (consumer, rules) = (tbm.consumer().clone(), tbm.len());
    let Some(target) = tbm.target().cloned() else {
        return bad_request("uploaded model must name its target");
    };
    match gw.monitor.replace_tbm(tbm) {
        Ok(()) => {
            info!(consumer = %consumer, target = %target, rules, "trusted behavior model replaced");
            Json(TbmUploaded { consumer, target, rules }).into_response()
        }
        Err(e) => bad_request(e.to_string()),
    }
}

fn header<'a>(headers: &'a HeaderMap, name: &str) -> Option<&'a str> {
    headers.get(name).and_then(|v| v.to_str().ok())
}

/// Check point for every model URI.
async fn checkpoint(
    State(gw): State<Arc<Gateway>>,
    method: Method,
    uri: axum::http::Uri,
    headers: HeaderMap,
) -> Response {
    let received = Instant::now();
    let path = uri.path();
    let Some(mock) = gw.mocks.get(path) else {
        return StatusCode::NOT_FOUND.into_response();
    };
    if method != Method::GET {
        return StatusCode::METHOD_NOT_ALLOWED.into_response();
    }
    let Some(consumer) = header(&headers, X_CONSUMER).and_then(|c| ConsumerId::new(c).ok()) else {
        return bad_request("missing or malformed X-Consumer header");
    };
    let Some(token) = header(&headers, X_SESSION) else {
        return bad_request("missing or malformed X-Session header");
    };
    let not_authenticated =
        || refusal(StatusCode::UNAUTHORIZED, Reason::NotAuthenticated, "no such session");
    let Some(entry) = gw.sessions.read().get(token).cloned() else {
        return not_authenticated();
    };
    let dst = mock.uri.clone();

    let (outcome, src, session_id) = {
        let mut e = entry.lock();
        if e.session.consumer() != &consumer {
            return not_authenticated();
        }
        let now = match gw.now(&headers) {
            Ok(now) => now,
            Err(msg) => return bad_request(msg),
        };
        if e.session.is_idle(now, gw.idle_timeout_ms) {
            drop(e);
            gw.sessions.write().remove(token);
            return refusal(StatusCode::UNAUTHORIZED, Reason::NotAuthenticated, "session expired");
        }
        let src = header(&headers, X_SOURCE)
            .and_then(|s| Uri::new(s).ok())
            .filter(|s| e.visited.contains(s))
            .unwrap_or_else(|| e.last_uri.clone());
        let elements = BehaviorElements { id: consumer.clone(), src: src.clone(), dst: dst.clone(), timestamp: now };
        let outcome = gw.monitor.decide(&mut e.session, &elements);
        if matches!(&outcome, Ok(d) if d.is_allow()) {
            e.visited.insert(dst.clone());
            e.last_uri = dst.clone();
        }
        if let Ok(d) = &outcome {
            if d.verdict != Verdict::DenyRequest || d.reason != Reason::SessionTerminated {
                let snapshot = gw.monitor.summary(&e.session).risk;
                if !d.is_allow() && d.reason != Reason::TbmMismatch {
                    info!("{snapshot}");
                }
                gw.metrics.record_risk(snapshot);
            }
        }
        (outcome, src, e.session.id())
    };

    let decision = match outcome {
        Ok(d) => d,
        Err(MonitorError::Store(e)) => return unavailable(e),
        Err(MonitorError::Risk(e @ RiskError::ClockRegression { .. })) => {
            return bad_request(e.to_string())
        }
        Err(MonitorError::ForeignSessionElements { .. }) => return not_authenticated(),
        Err(e) => return (StatusCode::INTERNAL_SERVER_ERROR, format!("{e}\n")).into_response(),
    };

    let (status, body) = match decision.permit {
        Some(permit) => match gw.mocks.call(path, permit).await {
            Some(body) => (StatusCode::OK, body),
            None => return StatusCode::NOT_FOUND.into_response(),
        },
        None => (StatusCode::FORBIDDEN, format!("{}\n", decision.reason)),
    };
    let latency_us = received.elapsed().as_micros() as u64;
    gw.metrics.record(
        &mock.service,
        decision.verdict,
        decision.is_allow().then_some(latency_us),
    );
    info!(
        target: "soaguard::decision",
        "{}",
        DecisionRecord { consumer: &consumer, session: session_id, src: &src, dst: &dst, decision, latency_us }
    );

    let mut resp = (status, body).into_response();
    let h = resp.headers_mut();
    h.insert(X_DECISION, HeaderValue::from_static(decision.verdict.as_str()));
    h.insert(X_REASON, HeaderValue::from_static(decision.reason.as_str()));
    h.insert(X_LATENCY_US, HeaderValue::from(latency_us));
    if let Some(p) = decision.permit {
        h.insert(X_PERMIT, HeaderValue::from(p.0));
    }
    resp
}
