use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use boostkit_core::{Ensemble, RoundKind};
use boostkit_harness::config::ExperimentConfig;
use boostkit_harness::dataset::{write_image_dataset, write_sequence_dataset};
use boostkit_harness::synth::{generate_synthetic, SynthParams, SyntheticKind};
use boostkit_harness::{run_experiment, HarnessError, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "boostkit", version, about = "Boosting experiments over small neural weak learners")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate a synthetic train/test pair with planted signal.
    Gen {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Summarize a saved ensemble.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Kind {
    ImagePlantedRows,
    SequencePlantedTokens,
}

fn run(config: PathBuf) -> Result<()> {
    let cfg = ExperimentConfig::load(&config)?;
    let out = run_experiment(&cfg)?;
    for r in &out.metrics {
        println!(
            "round {:>3}  alpha {:.4}  train_risk {:.6}  test_acc {:.4}  features {:.4}",
            r.round, r.alpha, r.train_risk, r.test_accuracy, r.feature_fraction
        );
    }
    if let Some(dir) = &cfg.out_dir {
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn gen(kind: Kind, out: PathBuf, seed: u64) -> Result<()> {
    let kind = match kind {
        Kind::ImagePlantedRows => SyntheticKind::ImagePlantedRows,
        Kind::SequencePlantedTokens => SyntheticKind::SequencePlantedTokens,
    };
    let data = generate_synthetic(&SynthParams::defaults(kind), seed)?;
    fs::create_dir_all(&out)?;
    match kind {
        SyntheticKind::ImagePlantedRows => {
            write_image_dataset(out.join("train.bkim"), &data.train)?;
            write_image_dataset(out.join("test.bkim"), &data.test)?;
        }
        SyntheticKind::SequencePlantedTokens => {
            write_sequence_dataset(out.join("train.jsonl"), &data.train)?;
            write_sequence_dataset(out.join("test.jsonl"), &data.test)?;
        }
    }
    fs::write(out.join("metadata.json"), serde_json::to_string_pretty(&data.metadata)?)?;
    println!("wrote {} train / {} test samples to {}", data.train.len(), data.test.len(), out.display());
    Ok(())
}

fn inspect(checkpoint: PathBuf) -> Result<()> {
    let e = Ensemble::load(&checkpoint)?;
    println!("classes {}  shrinkage {}  risk {:?}  rounds {}", e.classes(), e.shrinkage(), e.risk(), e.len());
    for (t, r) in e.rounds().iter().enumerate() {
        let kind = match r.kind {
            RoundKind::Basic => "basic",
            RoundKind::Additive => "additive",
        };
        println!(
            "  {t:>3}  {kind:<8}  alpha {:<10.6}  coef {:<10.6}  {}  {}",
            r.alpha,
            e.coefficient(t),
            serde_json::to_string(&r.learner.descriptor())?,
            serde_json::to_string(&r.view)?
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => run(config),
        Command::Gen { kind, out, seed } => gen(kind, out, seed),
        Command::Inspect { checkpoint } => inspect(checkpoint),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let HarnessError::Aborted { partial, .. } = &e {
                eprintln!("{} completed rounds recorded", partial.len());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
