use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use soaguard_cli::commands;
use soaguard_cli::{
    run_deauthorization, run_scaling, run_supervision, CliError, DeauthMode, EmbeddedGateway,
    ExperimentReport, ExperimentSpec, GatewayClient,
};
use soaguard_core::policy::RouteSelection;
use soaguard_gateway::{Gateway, GatewayConfig};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "soaguard", version, about = "Behavior-aware service access control")]
struct Cli {
    /// Gateway configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for generated request traces; overrides the experiment spec.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for generated files and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Service model checks.
    Model {
        #[command(subcommand)]
        verb: ModelVerb,
    },
    /// Trusted behavior model files.
    Tbm {
        #[command(subcommand)]
        verb: TbmVerb,
    },
    /// Consumer key helpers.
    Key {
        #[command(subcommand)]
        verb: KeyVerb,
    },
    /// Runs the gateway described by `--config`.
    Serve,
    /// Load experiments.
    Exp {
        #[command(subcommand)]
        verb: ExpVerb,
    },
    /// Ban store administration.
    Blacklist {
        #[command(subcommand)]
        verb: BlacklistVerb,
    },
}

#[derive(Debug, Subcommand)]
enum ModelVerb {
    Validate { model: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Routes {
    Shortest,
    AllShortest,
}

#[derive(Debug, Subcommand)]
enum TbmVerb {
    /// Compiles each releasing rule into `<consumer>-<target>.tbm`.
    Create {
        #[arg(long)]
        srm: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "shortest")]
        routes: Routes,
    },
    /// Adds `rb` lines from `rules` to an existing file.
    Append { tbm: PathBuf, rules: PathBuf },
    Show {
        tbm: PathBuf,
        /// Also check every URI against this model.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum KeyVerb {
    /// Prints the `salt:digest` form used in releasing rules.
    Hash {
        secret: String,
        /// 16-byte salt in hex; random when omitted.
        #[arg(long)]
        salt: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
enum ExpVerb {
    Supervise(ExpArgs),
    Deauth {
        #[command(flatten)]
        args: ExpArgs,
        /// Overrides the spec's mode.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    Scale(ExpArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Uar,
    Afr,
}

#[derive(Debug, clap::Args)]
struct ExpArgs {
    spec: PathBuf,
    /// Base URL of a running gateway; an embedded one is started otherwise.
    #[arg(long)]
    gateway: Option<String>,
}

#[derive(Debug, Subcommand)]
enum BlacklistVerb {
    List {
        #[arg(long)]
        store: Option<PathBuf>,
    },
    Remove {
        consumer: String,
        #[arg(long)]
        store: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default_level)),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(format!("tokio runtime: {e}")))
}

fn store_path(cli_config: Option<&Path>, store: Option<PathBuf>) -> Result<PathBuf, CliError> {
    if let Some(s) = store {
        return Ok(s);
    }
    let Some(path) = cli_config else {
        return Err(CliError::Invalid("pass --store or --config naming a blacklist".into()));
    };
    GatewayConfig::load(path)?
        .blacklist
        .ok_or_else(|| CliError::Invalid(format!("{} has no blacklist store", path.display())))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    match cli.command {
        Command::Model { verb: ModelVerb::Validate { model } } => {
            print!("{}", commands::model_validate(&model)?);
        }
        Command::Tbm { verb } => match verb {
            TbmVerb::Create { srm, model, routes } => {
                let routes = match routes {
                    Routes::Shortest => RouteSelection::Shortest,
                    Routes::AllShortest => RouteSelection::AllShortest,
                };
                let files = commands::tbm_create(&srm, &model, &out, routes)?;
                if files.is_empty() {
                    eprintln!("warning: {} releases nothing, no files written", srm.display());
                }
                for f in files {
                    println!("{}", f.display());
                }
            }
            TbmVerb::Append { tbm, rules } => {
                let added = commands::tbm_append(&tbm, &rules)?;
                println!("{added} rules added to {}", tbm.display());
            }
            TbmVerb::Show { tbm, model } => print!("{}", commands::tbm_show(&tbm, model.as_deref())?),
        },
        Command::Key { verb: KeyVerb::Hash { secret, salt } } => {
            println!("{}", commands::key_hash(&secret, salt.as_deref())?);
        }
        Command::Serve => {
            let path = cli
                .config
                .ok_or_else(|| CliError::Invalid("serve needs --config".into()))?;
            let config = GatewayConfig::load(&path)?;
            let gateway = Arc::new(Gateway::from_config(&config)?);
            runtime()?.block_on(async {
                let listener = tokio::net::TcpListener::bind(config.listen)
                    .await
                    .map_err(|e| CliError::Runtime(format!("cannot listen on {}: {e}", config.listen)))?;
                tracing::info!("gateway listening on {}", config.listen);
                soaguard_gateway::serve(gateway, listener)
                    .await
                    .map_err(|e| CliError::Runtime(e.to_string()))
            })?;
        }
        Command::Exp { verb } => {
            let (kind, args, mode) = match verb {
                ExpVerb::Supervise(a) => ("supervise", a, None),
                ExpVerb::Deauth { args, mode } => ("deauth", args, mode),
                ExpVerb::Scale(a) => ("scale", a, None),
            };
            let mut spec = ExperimentSpec::load(&args.spec)?;
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            match mode {
                Some(Mode::Uar) => spec.mode = DeauthMode::Uar,
                Some(Mode::Afr) => spec.mode = DeauthMode::Afr,
                None => {}
            }
            let report = runtime()?.block_on(async {
                let embedded;
                let client = match &args.gateway {
                    Some(url) => GatewayClient::new(url.clone()),
                    None => {
                        embedded = EmbeddedGateway::start(&spec, kind == "scale").await?;
                        embedded.client.clone()
                    }
                };
                match kind {
                    "supervise" => run_supervision(&client, &spec).await,
                    "deauth" => run_deauthorization(&client, &spec).await,
                    _ => run_scaling(&client, &spec).await,
                }
            })?;
            let name = report.experiment.clone();
            for f in report.write(&out, &name)? {
                eprintln!("wrote {}", f.display());
            }
            print!("{}", summarize(&report));
        }
        Command::Blacklist { verb } => match verb {
            BlacklistVerb::List { store } => {
                for e in commands::blacklist_list(&store_path(cli.config.as_deref(), store)?)? {
                    println!("{} {} {}", e.consumer, e.banned_at_unix_ms, e.reason);
                }
            }
            BlacklistVerb::Remove { consumer, store } => {
                let e = commands::blacklist_remove(&store_path(cli.config.as_deref(), store)?, &consumer)?;
                println!("removed {} (banned for {})", e.consumer, e.reason);
            }
        },
    }
    Ok(())
}

fn summarize(r: &ExperimentReport) -> String {
    let mut s = format!(
        "{} seed={} requests={} navigation={} errors={}\n",
        r.experiment, r.seed, r.request_count, r.navigation_requests, r.errors
    );
    for row in &r.services {
        s += &format!(
            "  {} access={} responded={} denied={} avg_latency_us={:.1}\n",
            row.service, row.access_times, row.responded_times, row.denied_times, row.avg_latency_us
        );
    }
    for g in &r.groups {
        s += &format!("  group {} rate={}/min sent={} responded={}\n", g.group, g.rate_per_min, g.sent, g.responded);
    }
    for row in &r.scaling {
        s += &format!("  rules={} mean_latency_us={:.1}\n", row.rules, row.mean_latency_us);
    }
    if let Some(t) = r.trigger {
        s += &format!("  trigger index={} group={:?} {} {}\n", t.index, t.group, t.verdict, t.reason);
    }
    if let Some(ok) = r.post_session_restored {
        s += &format!("  new session restored: {ok}\n");
    }
    s
}
