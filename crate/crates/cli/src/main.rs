use std::path::PathBuf;
use std::process::ExitCode;

use auxcnn_cli::commands;
use auxcnn_cli::config::ExperimentConfig;
use auxcnn_cli::exit_code;
use auxcnn_core::Result;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "auxcnn", version, about = "Train and evaluate classifiers with adversarial auxiliary networks")]
struct Cli {
    /// Experiment config file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Forces deterministic mode.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset as PGM files plus labels and manifest CSVs.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every configured method for every repeat.
    Train,
    /// Score a checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference checks of every primitive and loss.
    Gradcheck,
    /// Dump input and reconstruction pairs for test images.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        limit: usize,
    },
    /// Train the baseline and the configured methods, then test for differences.
    Compare,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::parse("", std::path::Path::new("."))?,
    };
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    if cli.deterministic {
        cfg.deterministic = true;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Synth { out } => {
            let ds = commands::synth(&cfg, out)?;
            println!("wrote {} images, class counts {:?}", ds.len(), ds.class_counts());
        }
        Command::Train => {
            for r in commands::train(&cfg)? {
                println!(
                    "{} seed {}: best epoch {} val acc {:.4} test f1 {:.4} -> {}",
                    r.method.name(),
                    r.seed,
                    r.best_epoch,
                    r.best_val_accuracy,
                    r.report.macro_avg.f1,
                    r.dir.display()
                );
            }
        }
        Command::Evaluate { checkpoint, out } => {
            let rep = commands::evaluate(&cfg, checkpoint, out)?;
            for (k, v) in rep.scalars() {
                println!("{k} {v:.4}");
            }
        }
        Command::Gradcheck => {
            let (entries, text) = commands::gradcheck(cfg.seed)?;
            print!("{text}");
            if entries.iter().any(|e| !e.report.passed) {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Reconstruct { checkpoint, out, limit } => {
            let n = commands::reconstruct(&cfg, checkpoint, out, *limit)?.len();
            println!("wrote {n} pairs to {}", out.display());
        }
        Command::Compare => {
            let cmp = commands::compare(&cfg)?;
            print!("{}", commands::ttest_csv(&cmp, cfg.baseline));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
