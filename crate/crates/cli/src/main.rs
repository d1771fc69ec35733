//! `farelens`: seed the provider mock, serve the API, sync drivers, run the
//! pipeline and build reports.

mod client;
mod commands;
mod error;
mod output;
mod settings;

use std::path::PathBuf;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use error::CliError;
use output::Out;
use settings::Settings;

#[derive(Debug, Parser)]
#[command(
    name = "farelens",
    version,
    about = "Rideshare take-rate data cooperative tooling"
)]
struct Cli {
    /// TOML file with the same keys as the environment variables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides DATA_DIR.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// One JSON object per output line.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Populate the provider mock with deterministic synthetic accounts.
    Seed(SeedArgs),
    /// Run the API with the provider mock co-hosted.
    Serve(ServeArgs),
    /// Backfill or refresh linked drivers on a running server.
    Sync(SyncArgs),
    /// Pipeline commands.
    Pipeline {
        #[command(subcommand)]
        command: PipelineCommand,
    },
    /// Report commands.
    Report {
        #[command(subcommand)]
        command: ReportCommand,
    },
}

#[derive(Debug, Args)]
pub struct SeedArgs {
    /// Number of synthetic accounts
    #[arg(long)]
    pub drivers: usize,
    /// Rides per account
    #[arg(long)]
    pub rides: usize,
    /// Base seed; account i uses seed + i
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.2, value_parser = probability)]
    pub surge_prob: f64,
    #[arg(long, default_value_t = 0.12, value_parser = probability)]
    pub airport_prob: f64,
    /// First day of the variable-commission era.
    #[arg(long, default_value = "2022-01-01")]
    pub era_cutover: NaiveDate,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// 0 picks a free port; the readiness line reports it.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

#[derive(Debug, Args)]
pub struct SyncArgs {
    /// Only this driver id; all linked drivers otherwise
    #[arg(long)]
    pub driver: Option<String>,
    /// Server origin; defaults to SERVER_URL, then BASE_URL.
    #[arg(long)]
    pub server: Option<String>,
}

#[derive(Debug, Subcommand)]
enum PipelineCommand {
    /// Clean, aggregate and compare a snapshot into a cached bundle.
    Run(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// First day, inclusive (needs --to)
    #[arg(long, requires = "to")]
    pub from: Option<NaiveDate>,
    /// Last day, inclusive
    #[arg(long, requires = "from")]
    pub to: Option<NaiveDate>,
    /// Affiliation name (or id); repeat for several.
    #[arg(long = "affiliation")]
    pub affiliations: Vec<String>,
    /// Read the snapshot from this server instead of DATA_DIR.
    #[arg(long)]
    pub server: Option<String>,
    /// Bundle cache root; defaults to DATA_DIR/bundles.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum ReportCommand {
    /// Render a report directory from a pipeline bundle.
    Build(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Bundle directory written by `pipeline run`
    #[arg(long)]
    pub bundle: PathBuf,
    /// Defaults to DATA_DIR/reports/<report id>.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn probability(s: &str) -> Result<f64, String> {
    let p: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(format!("{p} is outside [0, 1]"))
    }
}

fn init_tracing(command: &Command) {
    let default = if matches!(command, Command::Serve(_)) {
        "info"
    } else {
        "warn"
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

async fn run(cli: Cli) -> Result<(), CliError> {
    let mut settings = Settings::load(cli.config.as_deref())?;
    if let Some(dir) = &cli.data_dir {
        settings.set("DATA_DIR", dir.display().to_string());
    }
    let out = Out::new(cli.json);
    match cli.command {
        Command::Seed(args) => commands::seed(&settings, &out, args),
        Command::Serve(args) => commands::serve(&settings, &out, args).await,
        Command::Sync(args) => commands::sync(&settings, &out, args).await,
        Command::Pipeline {
            command: PipelineCommand::Run(args),
        } => commands::pipeline_run(&settings, &out, args).await,
        Command::Report {
            command: ReportCommand::Build(args),
        } => commands::report_build(&settings, &out, args),
    }
}

#[tokio::main]
async fn main() {
    // clap exits with status 2 on usage errors by itself
    let cli = Cli::parse();
    init_tracing(&cli.command);
    let json = cli.json;
    if let Err(e) = run(cli).await {
        Out::new(json).error(&e);
        std::process::exit(e.exit_code());
    }
}
