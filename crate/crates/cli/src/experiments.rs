//! Load generation against a running gateway.
//!
//! Every request carries `X-Replay-Ms`, so a gateway on the replay clock
//! sees the scheduled timeline instead of wall-clock time.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reqwest::StatusCode;
use soaguard_core::policy::{compile_tbm, ReleasingRule, RouteSelection, TrustedBehaviorRule};
use soaguard_core::{
    load_model, parse_srm, ConsumerId, Reason, ServiceId, SoaModel, Srm, Target, Uri, Verdict,
};
use soaguard_gateway::{
    AuthRequest, AuthResponse, MetricsDocument, X_CONSUMER, X_DECISION, X_LATENCY_US, X_REASON,
    X_REPLAY_MS, X_SESSION, X_SOURCE,
};

use crate::report::{ExperimentReport, GroupRow, ScaleRow, ServiceRow, Trigger, TraceEntry};
use crate::spec::{DeauthMode, ExperimentSpec};
use crate::CliError;

const MINUTE_MS: u64 = 60_000;

/// Outcome of one checkpoint request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reply {
    pub status: u16,
    pub verdict: Option<Verdict>,
    pub reason: Option<Reason>,
    pub latency_us: Option<u64>,
}

impl Reply {
    pub fn responded(&self) -> bool {
        self.status == StatusCode::OK.as_u16()
    }

    fn ends_session(&self) -> bool {
        matches!(self.verdict, Some(Verdict::TerminateSession | Verdict::Blacklisted))
    }
}

fn parse_verdict(s: &str) -> Option<Verdict> {
    [Verdict::Allow, Verdict::DenyRequest, Verdict::TerminateSession, Verdict::Blacklisted]
        .into_iter()
        .find(|v| v.as_str() == s)
}

/// Thin HTTP client for the gateway endpoints.
#[derive(Debug, Clone)]
pub struct GatewayClient {
    http: reqwest::Client,
    base: String,
}

impl GatewayClient {
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            http: reqwest::Client::new(),
            base: base.into().trim_end_matches('/').to_owned(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    /// Opens a session; `Ok(Err(status))` when the gateway refused it.
    pub async fn auth(
        &self,
        consumer: &str,
        key: &str,
        target: &str,
        at_ms: u64,
    ) -> Result<Result<String, u16>, CliError> {
        let body = AuthRequest { consumer: consumer.into(), key: key.into(), target: target.into() };
        let resp = self
            .http
            .post(format!("{}/auth", self.base))
            .header(X_REPLAY_MS, at_ms)
            .json(&body)
            .send()
            .await?;
        if resp.status() != StatusCode::OK {
            return Ok(Err(resp.status().as_u16()));
        }
        Ok(Ok(resp.json::<AuthResponse>().await?.session))
    }

    pub async fn get(
        &self,
        consumer: &str,
        session: &str,
        dst: &Uri,
        src: Option<&Uri>,
        at_ms: u64,
    ) -> Result<Reply, CliError> {
        let mut req = self
            .http
            .get(format!("{}{}", self.base, dst))
            .header(X_CONSUMER, consumer)
            .header(X_SESSION, session)
            .header(X_REPLAY_MS, at_ms);
        if let Some(src) = src {
            req = req.header(X_SOURCE, src.as_str());
        }
        let resp = req.send().await?;
        let h = resp.headers();
        let text = |name: &str| h.get(name).and_then(|v| v.to_str().ok()).map(str::to_owned);
        let reply = Reply {
            status: resp.status().as_u16(),
            verdict: text(X_DECISION).as_deref().and_then(parse_verdict),
            reason: text(X_REASON).and_then(|r| r.parse().ok()),
            latency_us: text(X_LATENCY_US).and_then(|l| l.parse().ok()),
        };
        resp.bytes().await?;
        Ok(reply)
    }

    pub async fn upload_tbm(&self, document: String) -> Result<(), CliError> {
        let resp = self
            .http
            .post(format!("{}/admin/tbm", self.base))
            .body(document)
            .send()
            .await?;
        if resp.status() != StatusCode::OK {
            let status = resp.status();
            let text = resp.text().await.unwrap_or_default();
            return Err(CliError::Runtime(format!(
                "gateway rejected model upload ({status}): {}",
                text.trim()
            )));
        }
        Ok(())
    }

    pub async fn metrics(&self) -> Result<MetricsDocument, CliError> {
        Ok(self
            .http
            .get(format!("{}/metrics", self.base))
            .send()
            .await?
            .json()
            .await?)
    }
}

/// What the load generator knows about the scenario: the model, its own
/// releasing rule and how to reach every service.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: SoaModel,
    pub srm: Srm,
    pub rule: ReleasingRule,
}

impl Scenario {
    pub fn load(spec: &ExperimentSpec) -> Result<Self, CliError> {
        let read = |p: &std::path::Path| std::fs::read_to_string(p).map_err(|e| CliError::io(p, e));
        let model = load_model(&read(&spec.model)?)
            .map_err(|e| CliError::Invalid(format!("{}: {e}", spec.model.display())))?;
        let srm = parse_srm(&read(&spec.scenario)?, &model)
            .map_err(|e| CliError::Invalid(format!("{}: {e}", spec.scenario.display())))?;
        let consumer = ConsumerId::new(&spec.consumer).map_err(|e| CliError::Invalid(e.to_string()))?;
        let target = Target::new(&spec.target).map_err(|e| CliError::Invalid(e.to_string()))?;
        let rule = srm.rule_for(&consumer, &target).cloned().ok_or_else(|| {
            CliError::Invalid(format!("no releasing rule for {consumer} and target {target}"))
        })?;
        for s in &spec.service_range {
            model.uri_of(s).map_err(|e| CliError::Invalid(e.to_string()))?;
        }
        Ok(Self { model, srm, rule })
    }

    /// Pages to walk through before the released services can be used:
    /// the inner services of every released route, as (source, page).
    pub fn navigation(&self) -> Vec<(Uri, Uri)> {
        let mut seen = HashSet::from([self.model.initial_uri().clone()]);
        let mut steps = Vec::new();
        for service in &self.rule.released {
            let Ok(route) = self.model.find_route(service) else { continue };
            let inner = route.transitions.len().saturating_sub(1);
            for t in &route.transitions[..inner] {
                let src = self.model.uri_of(&t.from).expect("route services exist").clone();
                let dst = self.model.uri_of(&t.to).expect("route services exist").clone();
                if seen.insert(dst.clone()) {
                    steps.push((src, dst));
                }
            }
        }
        steps
    }

    /// Page a request for `service` is issued from: its predecessor on the
    /// route from the initial service.
    pub fn source_of(&self, service: &ServiceId) -> Uri {
        self.model
            .find_route(service)
            .ok()
            .and_then(|r| r.transitions.last().map(|t| t.from.clone()))
            .and_then(|s| self.model.uri_of(&s).ok().cloned())
            .unwrap_or_else(|| self.model.initial_uri().clone())
    }

    pub fn uri(&self, service: &ServiceId) -> Uri {
        self.model.uri_of(service).expect("validated service").clone()
    }

    pub fn is_released(&self, service: &ServiceId) -> bool {
        self.rule.released.contains(service)
    }

    /// Service probed by the frequency and scaling runs.
    pub fn probe(&self, spec: &ExperimentSpec) -> ServiceId {
        spec.probe_service
            .clone()
            .unwrap_or_else(|| self.rule.released[0].clone())
    }
}

/// Uniform draw of `count` services from `range`.
pub fn request_trace(seed: u64, range: &[ServiceId], count: u64) -> Vec<ServiceId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| range[rng.random_range(0..range.len())].clone())
        .collect()
}

/// One open session plus its replay timeline.
struct Driver<'a> {
    client: &'a GatewayClient,
    spec: &'a ExperimentSpec,
    token: String,
    now: u64,
}

impl<'a> Driver<'a> {
    async fn open(
        client: &'a GatewayClient,
        spec: &'a ExperimentSpec,
        start: u64,
    ) -> Result<Driver<'a>, CliError> {
        let token = client
            .auth(&spec.consumer, &spec.key, &spec.target, start)
            .await?
            .map_err(|status| CliError::Runtime(format!("session refused with status {status}")))?;
        Ok(Self { client, spec, token, now: start })
    }

    async fn send_at(&mut self, at: u64, dst: &Uri, src: &Uri) -> Result<Reply, CliError> {
        self.now = self.now.max(at);
        self.client
            .get(&self.spec.consumer, &self.token, dst, Some(src), self.now)
            .await
    }

    async fn send(&mut self, dst: &Uri, src: &Uri) -> Result<Reply, CliError> {
        let at = self.now + self.spec.spacing_ms;
        self.send_at(at, dst, src).await
    }

    /// Walks the released routes; returns the number of requests.
    async fn navigate(&mut self, scenario: &Scenario) -> Result<u64, CliError> {
        let steps = scenario.navigation();
        for (src, dst) in &steps {
            let reply = self.send(dst, src).await?;
            if !reply.responded() {
                return Err(CliError::Runtime(format!(
                    "navigation to {dst} refused ({:?})",
                    reply.reason
                )));
            }
        }
        Ok(steps.len() as u64)
    }
}

#[derive(Default)]
struct Tally {
    access: u64,
    responded: u64,
    denied: u64,
    latency_sum: u64,
}

fn service_rows(range: &[ServiceId], trace: &[(ServiceId, Reply)]) -> (Vec<ServiceRow>, u64) {
    let mut tallies: BTreeMap<ServiceId, Tally> =
        range.iter().map(|s| (s.clone(), Tally::default())).collect();
    let mut errors = 0;
    for (service, reply) in trace {
        let t = tallies.entry(service.clone()).or_default();
        t.access += 1;
        if reply.responded() {
            t.responded += 1;
            t.latency_sum += reply.latency_us.unwrap_or(0);
        } else {
            t.denied += 1;
            if reply.status != StatusCode::FORBIDDEN.as_u16() {
                errors += 1;
            }
        }
    }
    let rows = tallies
        .into_iter()
        .map(|(service, t)| ServiceRow {
            service,
            access_times: t.access,
            responded_times: t.responded,
            denied_times: t.denied,
            avg_latency_us: if t.responded == 0 {
                0.0
            } else {
                t.latency_sum as f64 / t.responded as f64
            },
        })
        .collect();
    (rows, errors)
}

fn trace_entries(trace: &[(ServiceId, Reply)]) -> Vec<TraceEntry> {
    trace
        .iter()
        .map(|(s, r)| TraceEntry { service: s.clone(), status: r.status, verdict: r.verdict })
        .collect()
}

/// Fires the seeded request mix; with several workers each one drives its
/// own session over every `workers`-th request.
async fn replay_mix(
    client: &GatewayClient,
    spec: &ExperimentSpec,
    scenario: &Scenario,
) -> Result<(Vec<(ServiceId, Reply)>, u64, u64), CliError> {
    let trace = Arc::new(request_trace(spec.seed, &spec.service_range, spec.request_count));
    let workers = spec.workers.min(trace.len()).max(1);
    let mut results: Vec<Option<Reply>> = vec![None; trace.len()];
    let mut navigation = 0;
    let mut end = 0;
    let runs = (0..workers).map(|w| {
        let trace = trace.clone();
        async move {
            let mut d = Driver::open(client, spec, 0).await?;
            let nav = d.navigate(scenario).await?;
            let mut out = Vec::new();
            for i in (w..trace.len()).step_by(workers) {
                let service = &trace[i];
                let reply = d.send(&scenario.uri(service), &scenario.source_of(service)).await?;
                out.push((i, reply));
            }
            Ok::<_, CliError>((out, nav, d.now))
        }
    });
    for r in futures::future::join_all(runs).await {
        let (out, nav, last) = r?;
        navigation += nav;
        end = end.max(last);
        for (i, reply) in out {
            results[i] = Some(reply);
        }
    }
    let replies = trace
        .iter()
        .cloned()
        .zip(results.into_iter().map(|r| r.expect("every index answered")))
        .collect();
    Ok((replies, navigation, end))
}

fn first_trigger(trace: &[(ServiceId, Reply)]) -> Option<Trigger> {
    trace.iter().enumerate().find(|(_, (_, r))| r.ends_session()).map(|(i, (_, r))| Trigger {
        index: i as u64,
        group: None,
        verdict: r.verdict.expect("ending replies carry a verdict"),
        reason: r.reason.unwrap_or(Reason::Ok),
    })
}

/// Random requests over the service range with the spec's thresholds.
pub async fn run_supervision(
    client: &GatewayClient,
    spec: &ExperimentSpec,
) -> Result<ExperimentReport, CliError> {
    let scenario = Scenario::load(spec)?;
    let mut report = ExperimentReport::new("supervise", spec.seed);
    report.request_count = spec.request_count;
    if spec.request_count == 0 {
        return Ok(report);
    }
    let (trace, navigation, _) = replay_mix(client, spec, &scenario).await?;
    let (services, errors) = service_rows(&spec.service_range, &trace);
    report.navigation_requests = navigation;
    report.services = services;
    report.errors = errors;
    report.partial = errors > 0;
    report.trigger = first_trigger(&trace);
    report.trace = trace_entries(&trace);
    Ok(report)
}

/// Drives the session until a threshold ends it, then checks that a fresh
/// session is served again.
pub async fn run_deauthorization(
    client: &GatewayClient,
    spec: &ExperimentSpec,
) -> Result<ExperimentReport, CliError> {
    let scenario = Scenario::load(spec)?;
    let (mut report, end) = match spec.mode {
        DeauthMode::Uar => {
            let mut report = ExperimentReport::new("deauth-uar", spec.seed);
            report.request_count = spec.request_count;
            let (trace, navigation, end) = replay_mix(client, spec, &scenario).await?;
            let (services, errors) = service_rows(&spec.service_range, &trace);
            report.navigation_requests = navigation;
            report.services = services;
            report.errors = errors;
            report.trigger = first_trigger(&trace);
            report.trace = trace_entries(&trace);
            (report, end)
        }
        DeauthMode::Afr => frequency_run(client, spec, &scenario).await?,
    };
    report.partial = report.errors > 0;

    let probe = scenario.probe(spec);
    let restored = match client.auth(&spec.consumer, &spec.key, &spec.target, end + MINUTE_MS).await? {
        Ok(token) => {
            let mut d = Driver { client, spec, token, now: end + MINUTE_MS };
            d.navigate(&scenario).await?;
            d.send(&scenario.uri(&probe), &scenario.source_of(&probe)).await?.responded()
        }
        Err(_) => false,
    };
    report.post_session_restored = Some(restored);
    Ok(report)
}

/// Sends each schedule group within one minute at its rate.
async fn frequency_run(
    client: &GatewayClient,
    spec: &ExperimentSpec,
    scenario: &Scenario,
) -> Result<(ExperimentReport, u64), CliError> {
    let mut report = ExperimentReport::new("deauth-afr", spec.seed);
    let probe = scenario.probe(spec);
    let (dst, src) = (scenario.uri(&probe), scenario.source_of(&probe));
    let mut d = Driver::open(client, spec, 0).await?;
    report.navigation_requests = d.navigate(scenario).await?;
    let base = d.now + spec.spacing_ms;
    let mut trace = Vec::new();
    for (slot, &(group, rate)) in spec.frequency_schedule.iter().enumerate() {
        let start = base + slot as u64 * MINUTE_MS;
        let mut row = GroupRow { group, rate_per_min: rate, sent: 0, responded: 0 };
        for k in 0..rate {
            let reply = d.send_at(start + k * MINUTE_MS / rate, &dst, &src).await?;
            row.sent += 1;
            row.responded += u64::from(reply.responded());
            if report.trigger.is_none() && reply.ends_session() {
                report.trigger = Some(Trigger {
                    index: trace.len() as u64,
                    group: Some(group),
                    verdict: reply.verdict.expect("ending replies carry a verdict"),
                    reason: reply.reason.unwrap_or(Reason::Ok),
                });
            }
            trace.push((probe.clone(), reply));
        }
        report.groups.push(row);
    }
    report.request_count = trace.len() as u64;
    let (services, errors) = service_rows(std::slice::from_ref(&probe), &trace);
    report.services = services;
    report.errors = errors;
    report.trace = trace_entries(&trace);
    Ok((report, d.now))
}

/// The consumer's compiled model padded with rules over synthetic pages no
/// request ever touches, up to `size` rules.
pub fn padded_tbm(scenario: &Scenario, size: usize) -> Result<String, CliError> {
    let mut tbm = compile_tbm(&scenario.rule, &scenario.model, RouteSelection::Shortest)
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    let missing = size.saturating_sub(tbm.len());
    let consumer = tbm.consumer().clone();
    let filler = (0..missing).map(|i| {
        let src = Uri::new(format!("/pad/{i}")).expect("valid uri");
        let dst = Uri::new(format!("/pad/{i}/next")).expect("valid uri");
        TrustedBehaviorRule::new(consumer.clone(), src, dst)
    });
    tbm.append_rules(filler).map_err(|e| CliError::Invalid(e.to_string()))?;
    Ok(tbm.to_document())
}

/// Measures the probe latency reported by the gateway for growing models.
pub async fn run_scaling(
    client: &GatewayClient,
    spec: &ExperimentSpec,
) -> Result<ExperimentReport, CliError> {
    let scenario = Scenario::load(spec)?;
    let probe = scenario.probe(spec);
    let (dst, src) = (scenario.uri(&probe), scenario.source_of(&probe));
    let mut report = ExperimentReport::new("scale", spec.seed);
    let mut trace = Vec::new();
    let mut clock = 0;
    for &size in &spec.tbm_scale {
        client.upload_tbm(padded_tbm(&scenario, size)?).await?;
        let mut d = Driver::open(client, spec, clock).await?;
        report.navigation_requests += d.navigate(&scenario).await?;
        let mut means = Vec::with_capacity(spec.repetitions);
        for _ in 0..spec.repetitions {
            let mut sum = 0u64;
            for _ in 0..spec.requests_per_repetition {
                let reply = d.send(&dst, &src).await?;
                if !reply.responded() {
                    return Err(CliError::Runtime(format!(
                        "probe of {probe} refused at {size} rules ({:?})",
                        reply.reason
                    )));
                }
                sum += reply.latency_us.unwrap_or(0);
                trace.push((probe.clone(), reply));
            }
            means.push(sum as f64 / spec.requests_per_repetition as f64);
        }
        clock = d.now + MINUTE_MS;
        report.scaling.push(ScaleRow {
            rules: size,
            mean_latency_us: means.iter().sum::<f64>() / means.len() as f64,
            repetition_means_us: means,
        });
    }
    report.request_count = trace.len() as u64;
    let (services, errors) = service_rows(std::slice::from_ref(&probe), &trace);
    report.services = services;
    report.errors = errors;
    report.partial = errors > 0;
    Ok(report)
}
