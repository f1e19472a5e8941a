//! `mrsc` — command-line front end for the one-to-many semantic
//! communication simulator.

use clap::{Parser, Subcommand};
use mrsc_core::config::ExperimentConfig;
use mrsc_core::experiment::{
    cmd_baseline_snr, cmd_complexity, cmd_eval_snr, cmd_eval_users, cmd_gen_corpus, cmd_gradcheck,
    cmd_train, cmd_transfer, format_gradcheck, ExperimentError, RESULTS_CSV,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "mrsc",
    about = "One-to-many semantic communication simulator: learned transceiver, \
             classical baseline, BLEU sweeps",
    version
)]
struct Cli {
    /// Experiment configuration file (key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed override (takes precedence over the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for checkpoints, histories and results.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured corpus as one text file per class.
    GenCorpus,
    /// Phase 1: train transmitter + receiver 1 and the recognizer.
    Train,
    /// Phase 2: train a new receiver by transfer with the transmitter frozen.
    Transfer,
    /// BLEU versus SNR for the trained receivers and the classical chain.
    EvalSnr,
    /// Average-user BLEU versus user count (trains per-K systems as needed).
    EvalUsers,
    /// BLEU versus SNR for the classical chain alone (no checkpoints needed).
    BaselineSnr,
    /// Multiply/add counts: symbolic estimate versus instrumented forward.
    Complexity,
    /// Finite-difference verification of every autodiff primitive and the
    /// full transceiver loss.
    Gradcheck,
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    let cfg = ExperimentConfig::load(cli.config.as_deref(), cli.seed)?;
    let out = &cli.out;
    match cli.command {
        Command::GenCorpus => {
            let dir = cmd_gen_corpus(&cfg, out)?;
            println!("corpus written to {}", dir.display());
        }
        Command::Train => {
            let (history, report) = cmd_train(&cfg, out)?;
            let first = history.epoch_loss.first().copied().unwrap_or(0.0);
            let last = history.epoch_loss.last().copied().unwrap_or(0.0);
            println!(
                "phase 1 done: {} epochs, loss {first:.4} -> {last:.4}{}",
                history.epoch_loss.len(),
                match history.epochs_to_threshold {
                    Some(e) => format!(", reached threshold at epoch {e}"),
                    None => String::new(),
                }
            );
            if let Some(bleu) = history.epoch_val_bleu.last() {
                println!("validation BLEU-4: {bleu:.4}");
            }
            println!(
                "recognizer held-out accuracy: {:.3}",
                report.held_out_accuracy
            );
            println!("artifacts in {}", out.display());
        }
        Command::Transfer => {
            let history = cmd_transfer(&cfg, out)?;
            let last = history.epoch_loss.last().copied().unwrap_or(0.0);
            println!(
                "phase 2 done: receiver {} trained for {} epochs, final loss {last:.4}",
                cfg.phase2_user,
                history.epoch_loss.len()
            );
        }
        Command::EvalSnr => {
            let result = cmd_eval_snr(&cfg, out)?;
            print!("{}", result.to_csv());
            println!("written to {}", out.join(RESULTS_CSV).display());
        }
        Command::EvalUsers => {
            let result = cmd_eval_users(&cfg, out)?;
            print!("{}", result.to_csv());
            println!("written to {}", out.join(RESULTS_CSV).display());
        }
        Command::BaselineSnr => {
            let result = cmd_baseline_snr(&cfg, out)?;
            print!("{}", result.to_csv());
            println!("written to {}", out.join(RESULTS_CSV).display());
        }
        Command::Complexity => {
            print!("{}", cmd_complexity(&cfg)?);
        }
        Command::Gradcheck => {
            let results = cmd_gradcheck(cfg.seed);
            print!("{}", format_gradcheck(&results));
            let failures = results.iter().filter(|r| !r.passed()).count();
            if failures > 0 {
                return Err(ExperimentError::Config(
                    mrsc_core::config::ConfigError::Invalid {
                        key: "gradcheck".into(),
                        reason: format!("{failures} checks failed"),
                    },
                ));
            }
            println!("all gradient checks passed");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
