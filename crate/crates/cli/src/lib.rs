//! Operator toolkit: policy authoring, gateway launch, blacklist
//! administration and the load experiments.

pub mod commands;
pub mod experiments;
pub mod report;
pub mod spec;

use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use soaguard_gateway::{ClockMode, Gateway, GatewayConfig, GatewayError};
use thiserror::Error;
use tokio::task::JoinHandle;

pub use experiments::{run_deauthorization, run_scaling, run_supervision, GatewayClient};
pub use report::ExperimentReport;
pub use spec::{DeauthMode, ExperimentSpec};

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed or inconsistent input files and arguments.
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Runtime(String),
    #[error("gateway request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl CliError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn csv(path: &Path, e: csv::Error) -> Self {
        Self::Runtime(format!("{}: {e}", path.display()))
    }

    /// 1 for validation failures, 2 for runtime failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) | CliError::NotFound(_) => 1,
            CliError::Gateway(
                GatewayError::Config { .. }
                | GatewayError::Model { .. }
                | GatewayError::Policy { .. }
                | GatewayError::ReservedPath(_),
            ) => 1,
            _ => 2,
        }
    }
}

/// A gateway serving on a local port in a background task.
#[derive(Debug)]
pub struct EmbeddedGateway {
    pub gateway: Arc<Gateway>,
    pub addr: SocketAddr,
    pub client: GatewayClient,
    task: JoinHandle<io::Result<()>>,
}

impl EmbeddedGateway {
    /// Starts a replay-clock gateway enforcing the spec's scenario and
    /// thresholds. `admin` enables model uploads.
    pub async fn start(spec: &ExperimentSpec, admin: bool) -> Result<Self, CliError> {
        let mut config = GatewayConfig::new(&spec.model, &spec.scenario);
        config.listen = SocketAddr::from(([127, 0, 0, 1], 0));
        config.thresholds = spec.thresholds;
        config.afr_mode = spec.afr_mode;
        config.clock = ClockMode::Replay;
        config.admin = admin;
        Self::from_config(&config).await
    }

    pub async fn from_config(config: &GatewayConfig) -> Result<Self, CliError> {
        let gateway = Arc::new(Gateway::from_config(config)?);
        Self::serve(gateway, config.listen).await
    }

    pub async fn serve(gateway: Arc<Gateway>, listen: SocketAddr) -> Result<Self, CliError> {
        let (addr, task) = soaguard_gateway::spawn(gateway.clone(), listen)
            .await
            .map_err(|e| CliError::Runtime(format!("cannot listen on {listen}: {e}")))?;
        Ok(Self { gateway, addr, client: GatewayClient::new(format!("http://{addr}")), task })
    }
}

impl Drop for EmbeddedGateway {
    fn drop(&mut self) {
        self.task.abort();
    }
}
