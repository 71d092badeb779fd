//! Command-line experiments for `ddimlab`.
//!
//! `ddimlab <command> --config <file> [--out DIR] [--workers N] [--no-timestamp]`
//!
//! Exit codes: 0 success, 1 runtime or acceptance failure, 2 bad usage
//! (unparsable arguments, unreadable or invalid config).

pub mod accept;
pub mod commands;
pub mod config;
pub mod plot;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::commands::Ctx;
use crate::config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ddimlab", version, about = "Deterministic diffusion experiments on 2D point data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON run config; omitted keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory for checkpoints and artifacts.
    #[arg(long, global = true, default_value = "runs/default")]
    pub out: PathBuf,

    /// Worker threads for row-parallel work (1 is the bit-exact baseline).
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,

    /// Leave the generation timestamp out of SVG files.
    #[arg(long, global = true)]
    pub no_timestamp: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Train a denoiser; writes checkpoint.json and loss.csv.
    Train,
    /// Sample from a trained checkpoint.
    Generate,
    /// Map a grid of seeds through the sampler and extract grid clouds.
    Gravmap,
    /// Invert datapoints by gradient descent; convexity and mean checks.
    EmbedGd,
    /// Train an inverter network and refine its seeds.
    EmbedNet,
    /// Principal axes of seed clouds, or of a seed CSV given in the config.
    Pca,
    /// Density of generated points under standard normal seeds.
    Density,
    /// Train two architectures and compare their outputs on shared seeds.
    Uniqueness,
    /// Run the acceptance suite.
    Accept {
        /// Run only these criteria (comma separated ids).
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<u32>>,
    },
}

/// Failure split by exit code.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

fn load_config(cli: &Cli) -> std::result::Result<RunConfig, Failure> {
    match &cli.config {
        Some(p) => RunConfig::load(p).map_err(Failure::Usage),
        None => Ok(RunConfig::default()),
    }
}

/// Errors caused by the inputs rather than by the computation.
fn is_usage(e: &anyhow::Error) -> bool {
    e.chain().any(|c| matches!(c.downcast_ref::<ddimlab::Error>(), Some(ddimlab::Error::InvalidArgument(_))))
}

fn execute(cli: &Cli) -> std::result::Result<(), Failure> {
    let cfg = load_config(cli)?;
    let runtime = |r: Result<()>| r.map_err(|e| if is_usage(&e) { Failure::Usage(e) } else { Failure::Runtime(e) });
    if let Command::Accept { only } = &cli.command {
        let opts = accept::AcceptOptions { out: cli.out.clone(), workers: cli.workers, only: only.clone() };
        let results = accept::run_acceptance(&opts).map_err(Failure::Runtime)?;
        let failed: Vec<String> = results.iter().filter(|r| !r.passed).map(|r| r.id.to_string()).collect();
        println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
        return if failed.is_empty() { Ok(()) } else { Err(Failure::Runtime(anyhow::anyhow!("failed criteria: {}", failed.join(", ")))) };
    }
    let ctx = Ctx::new(cfg, &cli.out, cli.workers, !cli.no_timestamp).map_err(Failure::Runtime)?;
    runtime(match cli.command {
        Command::Train => commands::cmd_train(&ctx).map(drop),
        Command::Generate => commands::cmd_generate(&ctx).map(drop),
        Command::Gravmap => commands::cmd_gravmap(&ctx).map(drop),
        Command::EmbedGd => commands::cmd_embed_gd(&ctx).map(drop),
        Command::EmbedNet => commands::cmd_embed_net(&ctx).map(drop),
        Command::Pca => commands::cmd_pca(&ctx).map(drop),
        Command::Density => commands::cmd_density(&ctx).map(drop),
        Command::Uniqueness => commands::cmd_uniqueness(&ctx).map(drop),
        Command::Accept { .. } => unreachable!("handled above"),
    })
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}
