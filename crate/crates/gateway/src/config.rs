use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use soaguard_core::policy::RouteSelection;
use soaguard_core::risk::AfrMode;
use soaguard_core::Thresholds;

use crate::GatewayError;

/// Where request timestamps come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClockMode {
    /// Milliseconds since the gateway started.
    #[default]
    Monotonic,
    /// The client supplies timestamps in `X-Replay-Ms`. Meant for replaying
    /// recorded or scheduled traces faster than real time.
    Replay,
}

/// Gateway configuration, usually read from a TOML file.
///
/// ```toml
/// listen = "127.0.0.1:8080"
/// model = "prototype.model"
/// srm = "srm1.srm"
/// blacklist = "blacklist.db"
///
/// [thresholds]
/// uar_max = 1000
/// afr_max = 350
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    pub model: PathBuf,
    pub srm: PathBuf,
    /// Ban store. Without it bans live in memory only.
    #[serde(default)]
    pub blacklist: Option<PathBuf>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub afr_mode: AfrMode,
    #[serde(default)]
    pub arr_enforce: bool,
    #[serde(default = "default_idle_timeout")]
    pub idle_timeout_ms: u64,
    #[serde(default)]
    pub routes: RouteSelection,
    #[serde(default)]
    pub clock: ClockMode,
    /// Enables `POST /admin/tbm`.
    #[serde(default)]
    pub admin: bool,
    /// Fixed delay of every mock service.
    #[serde(default)]
    pub mock_latency_us: u64,
}

fn default_listen() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_idle_timeout() -> u64 {
    30 * 60 * 1000
}

impl GatewayConfig {
    /// Minimal configuration with defaults for everything but the policy files.
    pub fn new(model: impl Into<PathBuf>, srm: impl Into<PathBuf>) -> Self {
        Self {
            listen: default_listen(),
            model: model.into(),
            srm: srm.into(),
            blacklist: None,
            thresholds: Thresholds::default(),
            afr_mode: AfrMode::default(),
            arr_enforce: false,
            idle_timeout_ms: default_idle_timeout(),
            routes: RouteSelection::default(),
            clock: ClockMode::default(),
            admin: false,
            mock_latency_us: 0,
        }
    }

    /// Reads a config file. Relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|e| GatewayError::io(path, e))?;
        let mut config: Self = toml::from_str(&text).map_err(|e| GatewayError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.model = base.join(&config.model);
        config.srm = base.join(&config.srm);
        config.blacklist = config.blacklist.map(|b| base.join(b));
        config.thresholds.validate().map_err(|e| GatewayError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(config)
    }
}
