#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

mod check;
mod commands;
mod config;
mod output;

use config::{RunConfig, WORKERS_ENV};
use output::Status;

#[derive(Debug, Parser)]
#[command(
    name = "tlayer",
    version,
    about = "Transition-layer energies, cell problems and recovery-sequence checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    global: GlobalArgs,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Directory for JSON and CSV outputs.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Seed for randomized kicks and check iterates.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: config file, then $TLAYER_WORKERS, then all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimal one-dimensional transition energy for a jump.
    E1 {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Profile grid intervals.
        #[arg(long)]
        grid_n: Option<usize>,
    },
    /// Periodic cell energy for a jump.
    Eper {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Normal resolution of the cell grid.
        #[arg(long)]
        normal: Option<usize>,
    },
    /// Kernel slice profile, interpolation path and limit density.
    LimitDensity {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Profile resolution.
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Energies of the mollified (and optionally modified) sequences.
    Recover {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Field file, overriding `recover.field`.
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Table of optimized cell energies over the L grid.
    Scan {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Profile grid intervals.
        #[arg(long)]
        grid_n: Option<usize>,
    },
    /// Invariant and oracle suite.
    Check {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Include the slow oracles for every bundled problem.
        #[arg(long)]
        thorough: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::E1 { .. } => "e1",
            Command::Eper { .. } => "eper",
            Command::LimitDensity { .. } => "limit-density",
            Command::Recover { .. } => "recover",
            Command::Scan { .. } => "scan",
            Command::Check { .. } => "check",
        }
    }

    fn config_path(&self) -> Option<&PathBuf> {
        match self {
            Command::E1 { cfg, .. }
            | Command::Eper { cfg, .. }
            | Command::LimitDensity { cfg, .. }
            | Command::Recover { cfg, .. }
            | Command::Scan { cfg, .. }
            | Command::Check { cfg, .. } => cfg.config.as_ref(),
        }
    }
}

fn build_config(cli: &Cli) -> tlayer_core::Result<RunConfig> {
    let mut cfg = match cli.command.config_path() {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let g = &cli.global;
    if let Some(d) = &g.output_dir {
        cfg.output_dir = Some(d.clone());
    }
    if g.seed.is_some() {
        cfg.seed = g.seed;
    }
    if g.workers.is_some() {
        cfg.workers = g.workers;
    }
    match &cli.command {
        Command::E1 {
            grid_n: Some(n), ..
        }
        | Command::Scan {
            grid_n: Some(n), ..
        } => cfg.e1.grid_n = *n,
        Command::Eper {
            normal: Some(n), ..
        } => cfg.eper.normal = *n,
        Command::LimitDensity {
            resolution: Some(r),
            ..
        } => cfg.kernel.resolution = *r,
        Command::Recover { field: Some(f), .. } => {
            // flag paths are relative to the working directory
            cfg.recover.field = Some(std::fs::canonicalize(f).unwrap_or_else(|_| f.clone()));
        }
        Command::Check { thorough: true, .. } => cfg.check.thorough = true,
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn worker_count(cfg: &RunConfig) -> tlayer_core::Result<usize> {
    if let Some(w) = cfg.workers {
        return Ok(w);
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(w) if w > 0 => Ok(w),
            _ => config::config_err(format!(
                "{WORKERS_ENV} must be a positive integer, got '{v}'"
            )),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn run(cli: &Cli) -> tlayer_core::Result<(Status, String)> {
    let cfg = build_config(cli)?;
    let workers = worker_count(&cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| tlayer_core::Error::Config(format!("thread pool: {e}")))?;
    let out = output::OutputDir::create(&cfg, cli.command.name())?;
    pool.install(|| match &cli.command {
        Command::E1 { .. } => commands::e1(&cfg, &out),
        Command::Eper { .. } => commands::eper(&cfg, &out),
        Command::LimitDensity { .. } => commands::limit_density(&cfg, &out),
        Command::Recover { .. } => commands::recover(&cfg, &out),
        Command::Scan { .. } => commands::scan(&cfg, &out),
        Command::Check { .. } => check::run(&cfg, &out),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let name = cli.command.name();
    match run(&cli) {
        Ok((status, summary)) => {
            println!(
                "tlayer {name}: {summary} [{:.2} s]",
                start.elapsed().as_secs_f64()
            );
            ExitCode::from(status.code())
        }
        Err(e) => {
            eprintln!("tlayer {name}: error: {e}");
            ExitCode::from(Status::from_error(&e).code())
        }
    }
}
