//! Argument parsing and dispatch for the `xcaflow` binary.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use xcaflow_core::bench::Mechanism;

use crate::commands::*;
use crate::error::UsageError;
use crate::report::DEFAULT_LADDER;

#[derive(Debug, Parser)]
#[command(name = "xcaflow", version, about = "Coarse-to-fine optical flow with cross-covariance context attention")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on synthetic pairs from a TOML config; writes a checkpoint and a loss CSV.
    TrainToy {
        config: PathBuf,
        /// Absolute step count to train up to; overrides the config.
        #[arg(long)]
        steps: Option<usize>,
        /// Continue from a checkpoint that carries optimizer state.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Estimate flow between two images.
    Infer {
        checkpoint: PathBuf,
        image1: PathBuf,
        image2: PathBuf,
        /// Expected number of scales; must match the checkpoint.
        #[arg(long)]
        scales: Option<usize>,
        /// Per-scale GRU iterations, coarse to fine, e.g. "8,10,10,10".
        #[arg(long)]
        iters: Option<String>,
        /// Iteration preset: train, sintel or kitti.
        #[arg(long)]
        preset: Option<String>,
        /// Output flow file (.flo, or .png for KITTI encoding).
        #[arg(long, default_value = "flow.flo")]
        out: PathBuf,
        /// Colour-coded flow image (.png or .ppm).
        #[arg(long)]
        viz: Option<PathBuf>,
        /// Saturation radius of the colour coding; 0 uses the largest magnitude.
        #[arg(long, default_value_t = 0.0)]
        max_rad: f64,
    },
    /// Metrics of a prediction directory against a ground-truth directory.
    Eval {
        pred_dir: PathBuf,
        gt_dir: PathBuf,
        #[arg(long)]
        occ_masks: Option<PathBuf>,
        #[arg(long, default_value = "eval.csv")]
        csv: PathBuf,
    },
    /// Peak memory of token attention against cross-covariance attention.
    BenchAttn {
        #[arg(long, value_delimiter = ',', default_value = "token,xca")]
        mechanisms: Vec<String>,
        /// Square grid sides.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long, default_value_t = 32)]
        channels: usize,
        #[arg(long, default_value_t = 1)]
        heads: usize,
        /// Sizes predicted to need more than this are skipped.
        #[arg(long, default_value_t = 2560)]
        budget_mib: usize,
        #[arg(long, default_value = "bench")]
        out_dir: PathBuf,
    },
    /// Heat maps of the context and global-context features at one scale.
    VizContext {
        checkpoint: PathBuf,
        image: PathBuf,
        /// Scale index, 0 = coarsest.
        #[arg(long, default_value_t = 0)]
        scale: usize,
        /// Context channels entering the norm; all when omitted.
        #[arg(long, value_delimiter = ',')]
        channels: Vec<usize>,
        #[arg(long, default_value = "viz")]
        out_dir: PathBuf,
    },
    /// Write synthetic image pairs with ground-truth flow.
    Synth {
        out_dir: PathBuf,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainToy {
            config,
            steps,
            resume,
            checkpoint,
            loss_csv,
            quiet,
        } => {
            let s = cmd_train_toy(&TrainToyArgs {
                config,
                steps,
                resume,
                checkpoint,
                loss_csv,
                quiet,
            })?;
            println!(
                "trained steps {}..{}  final loss {}  final aepe {}  checkpoint {}",
                s.first_step,
                s.last_step,
                s.final_loss.map_or("-".into(), |v| format!("{v:.6}")),
                s.final_aepe.map_or("-".into(), |v| format!("{v:.4}")),
                s.checkpoint.display()
            );
        }
        Command::Infer {
            checkpoint,
            image1,
            image2,
            scales,
            iters,
            preset,
            out,
            viz,
            max_rad,
        } => {
            let (flow, sched) = cmd_infer(&InferArgs {
                checkpoint,
                image1,
                image2,
                scales,
                iters,
                preset,
                out: out.clone(),
                viz,
                max_rad,
            })?;
            println!(
                "schedule {:?}  flow {}x{}  written to {}",
                sched.iters(),
                flow.height(),
                flow.width(),
                out.display()
            );
        }
        Command::Eval {
            pred_dir,
            gt_dir,
            occ_masks,
            csv,
        } => {
            let table = cmd_eval(&pred_dir, &gt_dir, occ_masks.as_deref(), Some(&csv))?;
            print!("{}", table.render());
        }
        Command::BenchAttn {
            mechanisms,
            sizes,
            channels,
            heads,
            budget_mib,
            out_dir,
        } => {
            let mechanisms = mechanisms
                .iter()
                .map(|m| Mechanism::parse(m.trim()).ok_or_else(|| UsageError::new(format!("unknown mechanism '{m}'"))))
                .collect::<Result<Vec<_>, _>>()?;
            let reports = cmd_bench_attn(&BenchArgs {
                mechanisms,
                sides: sizes.unwrap_or_else(|| DEFAULT_LADDER.to_vec()),
                channels,
                heads,
                budget_bytes: budget_mib << 20,
                out_dir,
            })?;
            print!("{}", render_bench(&reports));
        }
        Command::VizContext {
            checkpoint,
            image,
            scale,
            channels,
            out_dir,
        } => {
            let maps = cmd_viz_context(&checkpoint, &image, scale, &channels, &out_dir)?;
            for m in &maps {
                println!("{}: {}x{} -> {}", m.name, m.width, m.height, out_dir.display());
            }
        }
        Command::Synth { out_dir, n, size, seed } => {
            cmd_synth(&out_dir, n, size, seed)?;
            println!("wrote {n} samples to {}", out_dir.display());
        }
    }
    Ok(())
}
