//! `ttjac`: sample generator scores, fit tensor-train score models, serve
//! lookups, probe ranks and sweep truncation trade-offs.

mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{EvalArgs, FitArgs, GeneratorArgs, ProbeArgs, SampleArgs, TruncateArgs};
use crate::config::{FileConfig, Overrides, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "ttjac", version, about)]
struct Cli {
    /// TOML run configuration; command-line flags take precedence
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// base seed for every random stage
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// expected latent dimension
    #[arg(long, short = 'd', global = true)]
    dim: Option<usize>,

    /// worker threads (default: available cores)
    #[arg(long, short = 'j', global = true)]
    threads: Option<usize>,

    /// more log output (-v info, -vv debug)
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// write a synthetic generator description as JSON
    Generator(GeneratorArgs),
    /// draw latents, score them exactly and quantize them onto the grid
    Sample(SampleArgs),
    /// fit a score model (ANOVA, optionally refined by ALS)
    Fit(FitArgs),
    /// look up scores for latent rows
    Eval(EvalArgs),
    /// singular-value spectra of pairwise dependency matrices
    Probe(ProbeArgs),
    /// precision/recall trade-off of score versus latent-norm filtering
    Truncate(TruncateArgs),
}

fn run(cli: Cli) -> CliResult<()> {
    let mut flags = Overrides {
        seed: cli.seed,
        d: cli.dim,
        threads: cli.threads,
        ..Default::default()
    };
    match &cli.command {
        Command::Generator(_) | Command::Eval(_) => {}
        Command::Sample(a) => a.overrides(&mut flags),
        Command::Fit(a) => a.overrides(&mut flags),
        Command::Probe(a) => a.overrides(&mut flags),
        Command::Truncate(a) => a.overrides(&mut flags),
    }
    let file = cli.config.as_deref().map(FileConfig::load).transpose()?;
    let cfg = RunConfig::resolve(file.as_ref(), &flags)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    log::debug!("resolved configuration: {cfg:?}");

    match &cli.command {
        Command::Generator(a) => commands::generator(a, &cfg),
        Command::Sample(a) => commands::sample(a, &cfg),
        Command::Fit(a) => commands::fit(a, &cfg),
        Command::Eval(a) => commands::eval(a),
        Command::Probe(a) => commands::probe(a, &cfg),
        Command::Truncate(a) => commands::truncate(a, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
