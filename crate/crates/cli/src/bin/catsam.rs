use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use catsam_cli::commands;
use catsam_cli::load_config;
use catsam_core::data::Domain;
use catsam_core::tuning::TuningMode;

#[derive(Parser)]
#[command(
    name = "catsam",
    about = "Conditional joint tuning of a miniature promptable segmenter"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set train.epochs=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as PGM files plus a manifest.
    GenData {
        #[arg(long)]
        domain: Domain,
        #[arg(long)]
        train: usize,
        #[arg(long)]
        test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the base model on the generic corpus.
    Pretrain(ConfigArgs),
    /// Few-shot tuning of one mode from the base checkpoint.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(ConfigArgs),
    /// Run the five ablation rows of one variant over all seeds.
    Ablate(ConfigArgs),
    /// Predict a mask for one image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// box:x0,y0,x1,y1 | point:x,y | coarse:<path>
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mode: Option<TuningMode>,
    },
    /// Print the frozen/trainable partition of every mode.
    Params(ConfigArgs),
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData {
            domain,
            train,
            test,
            seed,
            size,
            channels,
            out,
        } => {
            commands::cmd_gen_data(domain, train, test, seed, size, channels, &out)?;
            println!(
                "wrote {train} train + {test} test samples to {}",
                out.display()
            );
        }
        Command::Pretrain(a) => {
            let cfg = load_config(a.config.as_deref(), &a.overrides)?;
            let path = commands::cmd_pretrain(&cfg)?;
            println!("base checkpoint: {}", path.display());
        }
        Command::Train(a) => {
            let cfg = load_config(a.config.as_deref(), &a.overrides)?;
            let path = commands::cmd_train(&cfg)?;
            println!("tuned checkpoint: {}", path.display());
        }
        Command::Eval(a) => {
            let cfg = load_config(a.config.as_deref(), &a.overrides)?;
            let report = commands::cmd_eval(&cfg)?;
            println!("{}", serde_json::to_string(&report.summary())?);
        }
        Command::Ablate(a) => {
            let cfg = load_config(a.config.as_deref(), &a.overrides)?;
            let table = commands::cmd_ablate(&cfg)?;
            for row in &table.rows {
                println!(
                    "{:<10} median mIoU {:.4}  median mBIoU {:.4}",
                    row.mode.as_str(),
                    row.median_miou,
                    row.median_mbiou
                );
            }
        }
        Command::Predict {
            checkpoint,
            image,
            prompt,
            out,
            mode,
        } => {
            commands::cmd_predict(&checkpoint, &image, &prompt, &out, mode)?;
        }
        Command::Params(a) => {
            let cfg = load_config(a.config.as_deref(), &a.overrides)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&commands::params_report(&cfg.model)?)?
            );
        }
    }
    Ok(())
}
