use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use fedsgm::cli::{cmd_run, cmd_sweep, AveragedVerdict, Overrides};
use fedsgm::config::RunSpec;
use fedsgm::verify::{run_checks, VerifyOptions};

#[derive(Parser)]
#[command(name = "fedsgm", version, about = "Federated switching-subgradient simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one run and write trace.csv and summary.json.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Execute every cell of the config's [[sweep]] grid.
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Run the built-in invariant checks at reduced scale.
    Verify {
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct OverrideArgs {
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Replaces the config's round seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    snapshot_cadence: Option<usize>,
}

fn load(config: &PathBuf, o: OverrideArgs) -> Result<RunSpec> {
    let mut spec = RunSpec::load(config).with_context(|| format!("loading {}", config.display()))?;
    Overrides {
        output_dir: o.output_dir,
        seed: o.seed,
        snapshot_cadence: o.snapshot_cadence,
    }
    .apply(&mut spec);
    Ok(spec)
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run { config, overrides } => {
            let spec = load(&config, overrides)?;
            let s = cmd_run(&spec)?;
            println!(
                "{} rounds, final f = {:.6}, final g = {:.6}, eta = {:.6}, epsilon = {:.6}, |A| = {}",
                s.rounds_run, s.final_f, s.final_g, s.eta, s.epsilon, s.a_size
            );
            match &s.w_bar_verdict {
                AveragedVerdict::Available(v) => println!("averaged iterate: g = {:.6}", v.violation),
                AveragedVerdict::Unavailable { unavailable } => println!("averaged iterate unavailable: {unavailable}"),
            }
            println!("wrote {}", spec.output_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, overrides } => {
            let spec = load(&config, overrides)?;
            let cells = cmd_sweep(&spec)?;
            let failed: Vec<_> = cells.iter().filter(|c| c.outcome.is_err()).collect();
            for c in &failed {
                eprintln!("cell {} failed: {}", c.index, c.outcome.as_ref().unwrap_err());
            }
            println!(
                "{} cells, {} failed; index at {}",
                cells.len(),
                failed.len(),
                spec.output_dir.join("index.csv").display()
            );
            Ok(if failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Verify { seed } => {
            let mut opts = VerifyOptions::default();
            if let Some(seed) = seed {
                opts.seed = seed;
            }
            let results = run_checks(&opts);
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            Ok(if results.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}
