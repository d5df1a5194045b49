use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use dgp::commands;
use dgp::ExperimentConfig;

/// Disentangled graph prompting for graph-level OOD detection.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write the synthetic ID and OOD datasets in TU format.
    Synth,
    /// Pre-train the encoder; prints `epoch,loss` lines.
    Pretrain,
    /// Train prompts against a pre-trained encoder.
    Train,
    /// Score graphs with a trained model.
    Score,
    /// Compute detection metrics from a score CSV.
    Eval,
    /// Run every stage end to end and write a manifest.
    Pipeline,
    /// Sweep hyper-parameters on the validation split.
    Grid,
    /// Compare the ablated variants with the full model.
    Ablate,
    /// Write per-edge prompt weights.
    DumpPrompts,
}

fn print_epoch(epoch: usize, loss: f64) {
    println!("{epoch},{loss}");
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let path = cli.config.as_deref().context("--config <path> is required")?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = std::path::absolute(out)?;
    }

    match cli.command {
        Command::Synth => {
            for (dir, name) in commands::cmd_synth(&cfg)?.written {
                log::info!("wrote {name} to {}", dir.display());
            }
        }
        Command::Pretrain => {
            println!("epoch,loss");
            let r = commands::cmd_pretrain(&cfg, print_epoch)?;
            log::info!("encoder {} sha256 {}", r.path.display(), r.sha256);
        }
        Command::Train => {
            let r = commands::cmd_train(&cfg)?;
            log::info!("model {} (encoder sha256 {})", r.path.display(), r.encoder_sha256);
        }
        Command::Score => {
            let t = commands::cmd_score(&cfg)?;
            log::info!("{} scores written to {}", t.rows.len(), cfg.scores_file().display());
        }
        Command::Eval => {
            print!("{}", commands::cmd_eval(&cfg)?.to_json()?);
        }
        Command::Pipeline => {
            println!("epoch,loss");
            let m = commands::cmd_pipeline(&cfg, print_epoch)?;
            log::info!(
                "test AUC {:.4} (frozen encoder {:.4}); manifest {}",
                m.metrics.auc,
                m.baseline_metrics.auc,
                commands::manifest_file(&cfg).display()
            );
        }
        Command::Grid => {
            let r = commands::cmd_grid(&cfg)?;
            let b = r.result.best;
            log::info!(
                "best lambda={} gamma={} alpha1={} alpha2={} lr={} (val AUC {:.4})",
                b.lambda,
                b.gamma,
                b.alpha1,
                b.alpha2,
                b.lr,
                r.result.best_auc
            );
        }
        Command::Ablate => {
            for row in commands::cmd_ablate(&cfg)? {
                println!("{},{}", row.variant, row.auc);
            }
        }
        Command::DumpPrompts => {
            let rows = commands::cmd_dump_prompts(&cfg)?;
            log::info!("{} edge weights written", rows.len());
        }
    }
    Ok(())
}
