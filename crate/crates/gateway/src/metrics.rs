use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use soaguard_core::risk::RiskSnapshot;
use soaguard_core::{ConsumerId, ServiceId, SoaModel, Uri, Verdict};

#[derive(Debug, Default)]
struct ServiceCounters {
    access_times: AtomicU64,
    response_times: AtomicU64,
    latency_us_sum: AtomicU64,
}

/// Request counters per service and verdict, plus the latest risk snapshot
/// of every consumer.
#[derive(Debug)]
pub struct Metrics {
    services: BTreeMap<ServiceId, (Uri, ServiceCounters)>,
    verdicts: [AtomicU64; 4],
    risks: Mutex<BTreeMap<ConsumerId, RiskSnapshot>>,
}

fn verdict_slot(v: Verdict) -> usize {
    match v {
        Verdict::Allow => 0,
        Verdict::DenyRequest => 1,
        Verdict::TerminateSession => 2,
        Verdict::Blacklisted => 3,
    }
}

impl Metrics {
    pub fn new(model: &SoaModel) -> Self {
        Self {
            services: model
                .services()
                .map(|(id, _, uri)| (id.clone(), (uri.clone(), ServiceCounters::default())))
                .collect(),
            verdicts: Default::default(),
            risks: Mutex::new(BTreeMap::new()),
        }
    }

    /// Counts one decided request to `service`; `latency_us` is set when it
    /// was answered by the service.
    pub fn record(&self, service: &ServiceId, verdict: Verdict, latency_us: Option<u64>) {
        self.verdicts[verdict_slot(verdict)].fetch_add(1, Ordering::Relaxed);
        let Some((_, c)) = self.services.get(service) else { return };
        c.access_times.fetch_add(1, Ordering::Relaxed);
        if let Some(us) = latency_us {
            c.response_times.fetch_add(1, Ordering::Relaxed);
            c.latency_us_sum.fetch_add(us, Ordering::Relaxed);
        }
    }

    pub fn record_risk(&self, snapshot: RiskSnapshot) {
        self.risks.lock().insert(snapshot.consumer.clone(), snapshot);
    }

    pub fn document(&self) -> MetricsDocument {
        let services = self
            .services
            .iter()
            .map(|(id, (uri, c))| {
                let responded = c.response_times.load(Ordering::Relaxed);
                let sum = c.latency_us_sum.load(Ordering::Relaxed);
                ServiceMetrics {
                    service: id.clone(),
                    uri: uri.clone(),
                    access_times: c.access_times.load(Ordering::Relaxed),
                    response_times: responded,
                    avg_latency_us: if responded == 0 { 0.0 } else { sum as f64 / responded as f64 },
                }
            })
            .collect();
        let count = |v| self.verdicts[verdict_slot(v)].load(Ordering::Relaxed);
        MetricsDocument {
            services,
            verdicts: VerdictCounts {
                allow: count(Verdict::Allow),
                deny: count(Verdict::DenyRequest),
                terminated: count(Verdict::TerminateSession),
                blacklisted: count(Verdict::Blacklisted),
            },
            consumers: self.risks.lock().values().cloned().collect(),
        }
    }
}

/// Body of `GET /metrics`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub services: Vec<ServiceMetrics>,
    pub verdicts: VerdictCounts,
    pub consumers: Vec<RiskSnapshot>,
}

impl MetricsDocument {
    pub fn service(&self, id: &str) -> Option<&ServiceMetrics> {
        self.services.iter().find(|s| s.service.as_str() == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceMetrics {
    pub service: ServiceId,
    pub uri: Uri,
    pub access_times: u64,
    pub response_times: u64,
    pub avg_latency_us: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictCounts {
    pub allow: u64,
    pub deny: u64,
    pub terminated: u64,
    pub blacklisted: u64,
}

impl VerdictCounts {
    pub fn total(&self) -> u64 {
        self.allow + self.deny + self.terminated + self.blacklisted
    }
}
