use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use prseg_core::checkpoint::Checkpoint;
use prseg_harness::train::{checkpoint_config, Experiment};
use prseg_harness::{ablate, erf_probe, run_ablation, run_eval, run_train, Axis, ExperimentConfig};

/// Train, evaluate and probe patch-rotate segmentation decoders on
/// synthetic data.
#[derive(Parser)]
#[command(name = "prseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics, summary and checkpoint to a directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the eval split of a config.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Sweep one hyperparameter and print a table.
    Ablate {
        /// rho, group_size, blocks, dim, alpha or selection
        #[arg(long)]
        axis: String,
        /// Comma separated values.
        #[arg(long)]
        values: String,
        #[arg(long)]
        config: PathBuf,
        /// Training seeds per value, starting at the config seed.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// Also write the rows as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the decoder's receptive field at one output pixel.
    Erf {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output pixel as `row,col` at decoder resolution.
        #[arg(long)]
        center: String,
        /// `.pgm` for an image, anything else for JSON.
        #[arg(long)]
        out: PathBuf,
        /// Eval images to average over.
        #[arg(long, default_value_t = 8)]
        samples: usize,
    },
}

fn parse_center(s: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [r, c] = parts.as_slice() else {
        bail!("center must be `row,col`, got {s:?}");
    };
    Ok((
        r.parse().with_context(|| format!("bad row in {s:?}"))?,
        c.parse().with_context(|| format!("bad column in {s:?}"))?,
    ))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train { config, out, resume } => {
            let cfg = ExperimentConfig::load(&config)?;
            let summary = run_train(&cfg, &out, resume.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Eval { checkpoint, config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let rec = run_eval(&checkpoint, &cfg)?;
            println!("{}", serde_json::to_string_pretty(&rec)?);
        }
        Command::Ablate {
            axis,
            values,
            config,
            seeds,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let axis: Axis = axis.parse()?;
            let values: Vec<String> = values
                .split(',')
                .map(|v| v.trim().to_string())
                .filter(|v| !v.is_empty())
                .collect();
            let rows = run_ablation(&cfg, axis, &values, seeds)?;
            print!("{}", ablate::format_table(&rows));
            if let Some(out) = out {
                std::fs::write(&out, serde_json::to_string_pretty(&rows)? + "\n")
                    .with_context(|| format!("writing {}", out.display()))?;
            }
        }
        Command::Erf {
            checkpoint,
            center,
            out,
            samples,
        } => {
            let center = parse_center(&center)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let mut cfg = checkpoint_config(&ckpt)?;
            cfg.data.eval_images = samples.max(1);
            let exp = Experiment::new(cfg)?;
            let state = exp.restore(&ckpt)?;
            let inputs = exp
                .eval_set
                .images
                .iter()
                .map(|img| exp.model.encode(&img.detach(), &state.params))
                .collect::<Result<Vec<_>, _>>()?;
            let heat = erf_probe(&exp.model, &state.params, &inputs, center)?;
            heat.save(&out)?;
            println!(
                "{}x{} map, {} off-center pixels with gradient mass",
                heat.height,
                heat.width,
                heat.off_center_support().len()
            );
        }
    }
    Ok(())
}
