//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 runtime failure
//! (including failed oracle properties).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use asae::error::Error;
use asae::harness;

#[derive(Parser)]
#[command(name = "asae", about = "Cooperative multi-agent RL with marginal advantage estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file, writing metrics, checkpoints, and a plot.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Replace the config's seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override config values as section.key=value (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Evaluate a checkpoint on the environment stored inside it.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: usize,
        /// Use argmax actions instead of sampling.
        #[arg(long)]
        greedy: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run an executable-invariant suite and print pass/fail per property.
    OracleCheck {
        /// One of: advantage, kl, gradients, all.
        #[arg(long)]
        suite: String,
    },
    /// Render a learning-curve SVG from a metrics CSV.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::Argument(_) => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train { config, seed, set } => {
            let mut cfg = harness::load_config(&config, &set)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            let artifacts = harness::run_training(&cfg)?;
            println!("metrics: {}", artifacts.metrics_path.display());
            println!("plot: {}", artifacts.plot_path.display());
            for ckpt in &artifacts.checkpoints {
                println!("checkpoint: {}", ckpt.display());
            }
            Ok(())
        }
        Command::Eval {
            checkpoint,
            episodes,
            greedy,
            seed,
        } => {
            let report = harness::run_eval(&checkpoint, episodes, greedy, seed)?;
            println!(
                "episodes {} mean_return {:.6} +- {:.6} win_rate {:.4}",
                report.episodes, report.mean_return, report.return_std_err, report.win_rate
            );
            Ok(())
        }
        Command::OracleCheck { suite } => {
            let report = harness::run_suite(&suite)?;
            for p in &report.properties {
                println!("{}", p.line());
            }
            if report.all_pass() {
                Ok(())
            } else {
                Err(Error::Training(format!(
                    "{} of {} properties failed",
                    report.properties.iter().filter(|p| !p.pass).count(),
                    report.properties.len()
                )))
            }
        }
        Command::Plot { metrics, out } => {
            harness::emit_plot(&metrics, &out)?;
            println!("plot: {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version print and succeed; real usage errors exit 1.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
