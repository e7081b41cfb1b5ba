use std::collections::HashMap;
use std::time::Duration;

use parking_lot::Mutex;
use soaguard_core::monitor::Permit;
use soaguard_core::{ServiceId, SoaModel, Uri};

/// Stand-in for a real service interface.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockService {
    pub service: ServiceId,
    pub uri: Uri,
    pub latency: Duration,
    pub payload: String,
}

/// One mock per service of the model. Every hit must present the permit the
/// monitor issued for it; hits are logged when recording is on.
#[derive(Debug)]
pub struct MockServices {
    by_uri: HashMap<Uri, MockService>,
    hits: Option<Mutex<Vec<(ServiceId, Permit)>>>,
}

impl MockServices {
    pub fn new(model: &SoaModel, latency: Duration, record_hits: bool) -> Self {
        let by_uri = model
            .services()
            .map(|(id, _, uri)| {
                let mock = MockService {
                    service: id.clone(),
                    uri: uri.clone(),
                    latency,
                    payload: format!("service {id} at {uri}\n"),
                };
                (uri.clone(), mock)
            })
            .collect();
        Self {
            by_uri,
            hits: record_hits.then(|| Mutex::new(Vec::new())),
        }
    }

    pub fn get(&self, uri: &str) -> Option<&MockService> {
        self.by_uri.get(uri)
    }

    /// Serves a request that the monitor allowed.
    pub async fn call(&self, uri: &str, permit: Permit) -> Option<String> {
        let mock = self.by_uri.get(uri)?;
        if let Some(hits) = &self.hits {
            hits.lock().push((mock.service.clone(), permit));
        }
        if !mock.latency.is_zero() {
            tokio::time::sleep(mock.latency).await;
        }
        Some(mock.payload.clone())
    }

    /// Recorded hits, empty unless recording was enabled.
    pub fn hits(&self) -> Vec<(ServiceId, Permit)> {
        self.hits.as_ref().map(|h| h.lock().clone()).unwrap_or_default()
    }
}
