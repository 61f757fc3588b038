use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use homogwave::config::{Command as RunCommand, ExperimentConfig};
use homogwave::{runner, Error};

/// Experiment runner for periodic-media wave and homogenization studies.
#[derive(Parser)]
#[command(name = "homogwave", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// JSON experiment configuration
    #[arg(long)]
    config: PathBuf,
    /// output directory (overrides the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed (overrides the config)
    #[arg(long)]
    seed: Option<u64>,
    /// worker thread count (0 = all cores)
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute the effective coefficient tensor from the cell problem
    Cell(CommonArgs),
    /// Cell, flux, and boundary correctors with diagnostics
    Correctors(CommonArgs),
    /// Energy-norm convergence sweep over epsilon
    Rate(CommonArgs),
    /// L2-norm convergence sweep over epsilon
    L2rate(CommonArgs),
    /// Boundary observability ratios for random filtered data
    Observe(CommonArgs),
    /// Eigenfunction boundary-trace table
    Traces(CommonArgs),
    /// Boundary control of the filtered modes
    Control(CommonArgs),
    /// Multiplier-identity residuals for eigenmode trajectories
    Rellich(CommonArgs),
}

impl Cmd {
    fn split(self) -> (RunCommand, CommonArgs) {
        match self {
            Cmd::Cell(a) => (RunCommand::Cell, a),
            Cmd::Correctors(a) => (RunCommand::Correctors, a),
            Cmd::Rate(a) => (RunCommand::Rate, a),
            Cmd::L2rate(a) => (RunCommand::L2rate, a),
            Cmd::Observe(a) => (RunCommand::Observe, a),
            Cmd::Traces(a) => (RunCommand::Traces, a),
            Cmd::Control(a) => (RunCommand::Control, a),
            Cmd::Rellich(a) => (RunCommand::Rellich, a),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = cli.command.split();

    if args.threads > 0 {
        if let Err(e) =
            rayon::ThreadPoolBuilder::new().num_threads(args.threads).build_global()
        {
            eprintln!("error: could not size the worker pool: {e}");
            return ExitCode::from(2);
        }
    }

    let mut cfg = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    cfg.command = command;
    if let Some(out) = args.out {
        cfg.out_dir = Some(out.to_string_lossy().into_owned());
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }

    match runner::run(&cfg) {
        Ok(dir) => {
            println!("wrote artifacts to {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
