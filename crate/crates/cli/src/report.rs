use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use soaguard_core::{Reason, ServiceId, Verdict};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceRow {
    pub service: ServiceId,
    pub access_times: u64,
    pub responded_times: u64,
    pub denied_times: u64,
    pub avg_latency_us: f64,
}

/// The request that ended the session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trigger {
    /// Zero-based position in the logical request trace.
    pub index: u64,
    /// Schedule group, for frequency runs.
    pub group: Option<u32>,
    pub verdict: Verdict,
    pub reason: Reason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: u32,
    pub rate_per_min: u64,
    pub sent: u64,
    pub responded: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub rules: usize,
    pub mean_latency_us: f64,
    pub repetition_means_us: Vec<f64>,
}

/// One logical request and how it was answered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub service: ServiceId,
    pub status: u16,
    pub verdict: Option<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    pub request_count: u64,
    /// Requests that only walked the route to a released service.
    pub navigation_requests: u64,
    pub services: Vec<ServiceRow>,
    pub trigger: Option<Trigger>,
    pub groups: Vec<GroupRow>,
    pub scaling: Vec<ScaleRow>,
    /// Whether a fresh session could access a released service afterwards.
    pub post_session_restored: Option<bool>,
    /// Responses other than 200 and 403.
    pub errors: u64,
    pub partial: bool,
    pub trace: Vec<TraceEntry>,
}

impl ExperimentReport {
    pub fn new(experiment: &str, seed: u64) -> Self {
        Self {
            experiment: experiment.into(),
            seed,
            request_count: 0,
            navigation_requests: 0,
            services: Vec::new(),
            trigger: None,
            groups: Vec::new(),
            scaling: Vec::new(),
            post_session_restored: None,
            errors: 0,
            partial: false,
            trace: Vec::new(),
        }
    }

    pub fn service(&self, id: &str) -> Option<&ServiceRow> {
        self.services.iter().find(|s| s.service.as_str() == id)
    }

    pub fn responded(&self, id: &str) -> u64 {
        self.service(id).map_or(0, |s| s.responded_times)
    }

    pub fn total_responded(&self) -> u64 {
        self.services.iter().map(|s| s.responded_times).sum()
    }

    pub fn total_denied(&self) -> u64 {
        self.services.iter().map(|s| s.denied_times).sum()
    }

    /// The report with measured latencies zeroed, for comparing runs.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        for s in &mut r.services {
            s.avg_latency_us = 0.0;
        }
        for s in &mut r.scaling {
            s.mean_latency_us = 0.0;
            s.repetition_means_us.iter_mut().for_each(|m| *m = 0.0);
        }
        r
    }

    /// Writes `<name>.json` plus one CSV per non-empty table into `dir`.
    pub fn write(&self, dir: &Path, name: &str) -> Result<Vec<PathBuf>, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let mut written = Vec::new();
        let json = dir.join(format!("{name}.json"));
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(&json, text + "\n").map_err(|e| CliError::io(&json, e))?;
        written.push(json);
        if !self.services.is_empty() {
            written.push(write_csv(dir, &format!("{name}-services.csv"), &self.services)?);
        }
        if !self.groups.is_empty() {
            written.push(write_csv(dir, &format!("{name}-groups.csv"), &self.groups)?);
        }
        if !self.scaling.is_empty() {
            let rows: Vec<_> = self
                .scaling
                .iter()
                .map(|s| (s.rules, s.mean_latency_us))
                .collect();
            let path = dir.join(format!("{name}-scaling.csv"));
            let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::csv(&path, e))?;
            w.write_record(["rules", "mean_latency_us"])
                .map_err(|e| CliError::csv(&path, e))?;
            for r in rows {
                w.serialize(r).map_err(|e| CliError::csv(&path, e))?;
            }
            w.flush().map_err(|e| CliError::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn write_csv<T: Serialize>(dir: &Path, file: &str, rows: &[T]) -> Result<PathBuf, CliError> {
    let path = dir.join(file);
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::csv(&path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::csv(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}
