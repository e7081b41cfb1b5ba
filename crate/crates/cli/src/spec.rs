use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use soaguard_core::risk::AfrMode;
use soaguard_core::{ServiceId, Thresholds};

use crate::CliError;

/// Which risk the deauthorization experiment drives.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeauthMode {
    /// Replays the supervision mix; mismatches accumulate UAR.
    #[default]
    Uar,
    /// Drives the frequency schedule against one released service.
    Afr,
}

/// One experiment, read from TOML. Relative paths are resolved against the
/// spec file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub model: PathBuf,
    /// Releasing rules the gateway enforces.
    pub scenario: PathBuf,
    pub consumer: String,
    pub key: String,
    pub target: String,
    #[serde(default)]
    pub request_count: u64,
    #[serde(default)]
    pub service_range: Vec<ServiceId>,
    /// Thresholds of the embedded gateway. Omitted means all evidence off.
    #[serde(default = "Thresholds::disabled")]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub afr_mode: AfrMode,
    #[serde(default)]
    pub seed: u64,
    /// Replay-clock gap between consecutive requests.
    #[serde(default = "default_spacing")]
    pub spacing_ms: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub mode: DeauthMode,
    /// `(group, requests per minute)`, one minute per group.
    #[serde(default)]
    pub frequency_schedule: Vec<(u32, u64)>,
    /// Service hit by the frequency and scaling experiments.
    #[serde(default)]
    pub probe_service: Option<ServiceId>,
    #[serde(default)]
    pub tbm_scale: Vec<usize>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_requests_per_repetition")]
    pub requests_per_repetition: usize,
}

fn default_spacing() -> u64 {
    200
}

fn default_workers() -> usize {
    1
}

fn default_repetitions() -> usize {
    5
}

fn default_requests_per_repetition() -> usize {
    20
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut spec: Self = toml::from_str(&text)
            .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        spec.model = base.join(&spec.model);
        spec.scenario = base.join(&spec.scenario);
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |m: &str| Err(CliError::Invalid(m.into()));
        if self.workers == 0 {
            return invalid("workers must be positive");
        }
        if self.request_count > 0 && self.service_range.is_empty() {
            return invalid("service_range must not be empty");
        }
        if self.frequency_schedule.iter().any(|&(_, r)| r == 0) {
            return invalid("frequency schedule rates must be positive");
        }
        if self.tbm_scale.contains(&0) {
            return invalid("tbm_scale sizes must be positive");
        }
        if !self.tbm_scale.is_empty() && (self.repetitions == 0 || self.requests_per_repetition == 0) {
            return invalid("repetitions and requests_per_repetition must be positive");
        }
        self.thresholds
            .validate()
            .map_err(|e| CliError::Invalid(e.to_string()))
    }
}
