use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dccfssl::config::{RunConfig, SweepConfig};
use dccfssl::experiment::{run_experiment, run_sweep, workers_from_env};
use dccfssl::plot::emit_plots;
use dccfssl::Error;

/// Federated semi-supervised learning simulator. Worker threads come from
/// DCCFSSL_WORKERS; everything else lives in config files.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every point of an experiment grid.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
    },
    /// Render accuracy and stability plots from metrics logs.
    Plot {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    let workers = workers_from_env();
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let out = out
                .or_else(|| cfg.out_dir.clone())
                .unwrap_or_else(|| PathBuf::from("runs").join(cfg.method.as_str()));
            let summary = run_experiment(&cfg, &out, workers)?;
            println!(
                "{}: final accuracy {} stability std {} -> {}",
                summary.method,
                summary
                    .final_accuracy
                    .map_or("n/a".into(), |a| format!("{a:.4}")),
                summary
                    .stability_std
                    .map_or("n/a".into(), |s| format!("{s:.4}")),
                out.display()
            );
        }
        Command::Sweep { grid } => {
            let grid = SweepConfig::load(&grid)?;
            for (name, summary) in run_sweep(&grid, workers)? {
                println!(
                    "{name}: final accuracy {}",
                    summary
                        .final_accuracy
                        .map_or("n/a".into(), |a| format!("{a:.4}"))
                );
            }
        }
        Command::Plot { logs, out } => {
            for path in emit_plots(&logs, &out)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
