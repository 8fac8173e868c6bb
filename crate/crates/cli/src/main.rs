mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ConfigError;

#[derive(Debug, Parser)]
#[command(
    name = "tandem",
    version,
    about = "Surrogate, directive and coordinate coupling runs on a toy crystal domain"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML or JSON config file; defaults apply when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the config worker count.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output file; stdout when absent (required for checkpoints).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Sleep this many milliseconds per oracle cost unit.
    #[arg(long, global = true, value_name = "MS_PER_UNIT")]
    pub real_latency: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label a toy corpus, train the surrogate and save its checkpoint.
    TrainSurrogate,
    /// Train the structure denoiser on the toy corpus and save it.
    TrainDenoiser,
    /// Sample structures from the configured generator.
    Generate {
        /// Number of structures; defaults to the directive batch size.
        #[arg(long)]
        count: Option<usize>,
        /// Fixed composition (CSP mode), e.g. Fe2O3.
        #[arg(long)]
        composition: Option<String>,
        #[arg(long, default_value_t = 0)]
        batch_index: usize,
    },
    /// Run the four validity filters over a JSON list of structures.
    Screen { input: PathBuf },
    /// Inspect or extend the structure depot.
    Depot {
        #[command(subcommand)]
        action: DepotAction,
    },
    /// Run one coupling pattern and write its report.
    Run {
        #[command(subcommand)]
        pattern: RunPattern,
    },
    /// Re-run a recorded coordinate trace.
    Replay {
        trace: PathBuf,
        /// Re-decide every gate under the trace thresholds instead of
        /// failing on the first recorded route that differs.
        #[arg(long)]
        sweep: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum DepotAction {
    /// Store structures from JSON (single or list) or POSCAR files.
    Ingest {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Find records by structure digest or reduced formula.
    Search {
        #[arg(long, conflicts_with = "formula", required_unless_present = "formula")]
        digest: Option<String>,
        #[arg(long)]
        formula: Option<String>,
    },
    /// Element, size and crystal-system statistics.
    Stats,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum RunPattern {
    Surrogate,
    Directive,
    Coordinate,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let config = err.downcast_ref::<ConfigError>().is_some()
        || matches!(err.downcast_ref::<tandem_core::Error>(), Some(tandem_core::Error::Config(_)));
    if config {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("TANDEM_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
