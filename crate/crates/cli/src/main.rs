//! `covol` command-line front-end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use covol_cli::commands::{self, Provenance};
use covol_cli::config::RunConfig;
use covol_cli::CliError;

#[derive(Debug, Parser)]
#[command(name = "covol", version, about = "Simulate, fit and evaluate co-volatility models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write simulated datasets as CSV with JSON sidecars.
    Simulate(Args),
    /// Fit a model and write checkpoints and a fit report.
    Fit(Args),
    /// Tabulate MSE and objective differences for saved checkpoints.
    Evaluate(Args),
    /// Time value-and-gradient evaluation of each objective.
    Bench(Args),
}

#[derive(Debug, clap::Args)]
struct Args {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
}

fn prepare(args: &Args, command: &str) -> Result<(RunConfig, Provenance), CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.config.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    let resolved = cfg.to_toml();
    write_text(&args.out.join("resolved_config.toml"), &resolved)?;
    let hash = Sha256::digest(resolved.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
    let prov = Provenance { command: command.into(), config_hash: hash, seed: cfg.seed };
    Ok((cfg, prov))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(a) => {
            let (cfg, prov) = prepare(a, "simulate")?;
            commands::cmd_simulate(&cfg, &a.out, &prov)
        }
        Command::Fit(a) => {
            let (cfg, prov) = prepare(a, "fit")?;
            let report = commands::cmd_fit(&cfg, &a.out, &prov)?;
            for r in &report.results {
                println!("replication {}: θ̂ = {:?}", r.replication, r.theta);
            }
            Ok(())
        }
        Command::Evaluate(a) => {
            let (cfg, _) = prepare(a, "evaluate")?;
            commands::cmd_evaluate(&cfg, &a.out)
        }
        Command::Bench(a) => {
            let (cfg, prov) = prepare(a, "bench")?;
            let r = commands::cmd_bench(&cfg, &a.out, &prov)?;
            println!("Ḣ speedup over H: {:.1}×, Ȟ: {:.2}×", r.speedup_dot, r.speedup_check);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("covol: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
