//! Command implementations behind the `xcaflow` binary.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use xcaflow_core::bench::{footprint_analytic, footprint_empirical, FootprintReport, Mechanism};
use xcaflow_core::color::flow_to_color;
use xcaflow_core::training::{generate_synthetic, train_toy, StepRecord, TrainState};
use xcaflow_core::{FlowField, FlowModel, IterationSchedule, SchedulePreset};

use crate::checkpoint;
use crate::config::{parse_iters, write_loss_csv, ToyConfig};
use crate::error::{NumericError, UsageError};
use crate::evaldir::{evaluate_dirs, EvalTable};
use crate::io::{read_image, write_flo, write_flow_any, write_image, write_mask, write_rgb};
use crate::meter::ThreadMeter;
use crate::report::{plot_loglog, write_csv};
use crate::viz::{context_heatmaps, write_heatmap, HeatMap};

#[derive(Clone, Debug, Default)]
pub struct TrainToyArgs {
    pub config: PathBuf,
    pub steps: Option<usize>,
    pub resume: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub loss_csv: Option<PathBuf>,
    pub quiet: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub first_step: usize,
    pub last_step: usize,
    pub final_loss: Option<f64>,
    pub final_aepe: Option<f64>,
    pub checkpoint: PathBuf,
}

pub fn cmd_train_toy(args: &TrainToyArgs) -> Result<TrainSummary> {
    let cfg = ToyConfig::load(&args.config)?;
    let model_cfg = cfg.model_config()?;
    let mut train_cfg = cfg.train_config()?;
    if let Some(s) = args.steps {
        train_cfg.steps = s;
    }
    let (model, mut store, mut state) = match &args.resume {
        Some(path) => {
            let ck = checkpoint::load(path)?;
            if ck.config != model_cfg {
                return Err(UsageError::new(format!(
                    "checkpoint {} was trained with a different model configuration",
                    path.display()
                ))
                .into());
            }
            let model = ck.model()?;
            let state = ck
                .train_state
                .ok_or_else(|| UsageError::new(format!("checkpoint {} has no optimizer state", path.display())))?;
            (model, ck.store, state)
        }
        None => {
            let (model, store) = FlowModel::new(model_cfg.clone(), cfg.seed)?;
            let state = TrainState::new(&store);
            (model, store, state)
        }
    };
    let data = generate_synthetic(cfg.data.samples, cfg.data.size, cfg.data.seed)?;
    let first_step = state.step;
    let quiet = args.quiet;
    let records: Vec<StepRecord> = train_toy(&model, &mut store, &data, &train_cfg, &mut state, &mut |r| {
        if !quiet && r.aepe.is_some() {
            eprintln!(
                "step {:>6}  loss {:.4}  lr {:.2e}  grad {:.3}  aepe {:.4}",
                r.step,
                r.loss,
                r.lr,
                r.grad_norm,
                r.aepe.unwrap()
            );
        }
    })?;
    let ck_path = args.checkpoint.clone().unwrap_or(cfg.output.checkpoint.clone());
    checkpoint::save(&ck_path, &model_cfg, &store, Some(&state))?;
    let csv_path = args.loss_csv.clone().unwrap_or(cfg.output.loss_csv.clone());
    if first_step > 0 && csv_path.exists() {
        append_loss_csv(&csv_path, &records)?;
    } else {
        write_loss_csv(&csv_path, &records)?;
    }
    Ok(TrainSummary {
        first_step,
        last_step: state.step,
        final_loss: records.last().map(|r| r.loss),
        final_aepe: records.iter().rev().find_map(|r| r.aepe),
        checkpoint: ck_path,
    })
}

fn append_loss_csv(path: &Path, records: &[StepRecord]) -> Result<()> {
    let tmp = path.with_extension("part.csv");
    write_loss_csv(&tmp, records)?;
    let text = fs::read_to_string(&tmp)?;
    fs::remove_file(&tmp)?;
    let body: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
    let mut old = fs::read_to_string(path)?;
    old.push_str(&body);
    Ok(fs::write(path, old)?)
}

/// Iteration schedule from explicit counts, a preset name, or the training
/// preset when neither is given.
pub fn resolve_infer_schedule(num_scales: usize, iters: Option<&str>, preset: Option<&str>) -> Result<IterationSchedule> {
    match (iters, preset) {
        (Some(_), Some(_)) => Err(UsageError::new("give either --iters or --preset, not both").into()),
        (Some(s), None) => {
            let sched = IterationSchedule::new(parse_iters(s)?)?;
            if sched.len() != num_scales {
                return Err(UsageError::new(format!(
                    "--iters has {} entries but the model has {num_scales} scales",
                    sched.len()
                ))
                .into());
            }
            Ok(sched)
        }
        (None, p) => {
            let name = p.unwrap_or("train");
            let preset = SchedulePreset::parse(name).ok_or_else(|| UsageError::new(format!("unknown preset '{name}'")))?;
            IterationSchedule::preset(preset, num_scales)
                .map_err(|e| UsageError::new(format!("preset '{name}' with {num_scales} scales: {e}")).into())
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct InferArgs {
    pub checkpoint: PathBuf,
    pub image1: PathBuf,
    pub image2: PathBuf,
    pub scales: Option<usize>,
    pub iters: Option<String>,
    pub preset: Option<String>,
    pub out: PathBuf,
    pub viz: Option<PathBuf>,
    pub max_rad: f64,
}

pub fn cmd_infer(args: &InferArgs) -> Result<(FlowField, IterationSchedule)> {
    let ck = checkpoint::load(&args.checkpoint)?;
    let model = ck.model()?;
    let s = model.config.num_scales;
    if let Some(req) = args.scales {
        if req != s {
            return Err(UsageError::new(format!("--scales {req} does not match the checkpoint's {s} scales")).into());
        }
    }
    let schedule = resolve_infer_schedule(s, args.iters.as_deref(), args.preset.as_deref())?;
    let i1 = read_image(&args.image1)?;
    let i2 = read_image(&args.image2)?;
    let flow = model.infer(&ck.store, &i1, &i2, &schedule)?;
    if !flow.tensor().all_finite() {
        return Err(NumericError::new("inference produced non-finite flow").into());
    }
    write_flow_any(&args.out, &flow)?;
    if let Some(v) = &args.viz {
        write_rgb(v, &flow_to_color(flow.tensor(), args.max_rad))?;
    }
    Ok((flow, schedule))
}

pub fn cmd_eval(pred: &Path, gt: &Path, occ: Option<&Path>, csv: Option<&Path>) -> Result<EvalTable> {
    let table = evaluate_dirs(pred, gt, occ)?;
    if let Some(p) = csv {
        table.write_csv(p)?;
    }
    Ok(table)
}

#[derive(Clone, Debug)]
pub struct BenchArgs {
    pub mechanisms: Vec<Mechanism>,
    pub sides: Vec<usize>,
    pub channels: usize,
    pub heads: usize,
    pub budget_bytes: usize,
    pub out_dir: PathBuf,
}

pub fn cmd_bench_attn(args: &BenchArgs) -> Result<Vec<FootprintReport>> {
    if !ThreadMeter::active() {
        return Err(NumericError::new("the counting allocator is not installed in this process").into());
    }
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let reports = args
        .mechanisms
        .iter()
        .map(|&m| footprint_empirical(m, &args.sides, args.channels, args.heads, args.budget_bytes, &ThreadMeter))
        .collect::<xcaflow_core::Result<Vec<_>>>()?;
    write_csv(&args.out_dir.join("bench.csv"), &reports)?;
    plot_loglog(&args.out_dir.join("bench.png"), &reports)?;
    Ok(reports)
}

pub fn render_bench(reports: &[FootprintReport]) -> String {
    let mut s = String::new();
    for r in reports {
        let slope = r.slope.map_or_else(|| "n/a (fewer than 4 points)".into(), |v| format!("{v:.3}"));
        s += &format!(
            "{}: d={} h={} points={} truncated={:?} slope={}\n",
            r.mechanism.name(),
            r.channels,
            r.heads,
            r.points.len(),
            r.truncated,
            slope
        );
        for p in &r.points {
            s += &format!("  {:>4}^2 tokens={:>6} elements={:>12} peak={:>12} B\n", p.side, p.tokens, p.elements, p.peak_bytes);
        }
    }
    let xca: Vec<u64> = [1u64, 1 << 10, 1 << 16].iter().map(|&n| footprint_analytic(Mechanism::Xca, n, 256, 8)).collect();
    s += &format!("analytic xca elements (d=256, h=8) at N=1, 2^10, 2^16: {xca:?}\n");
    s
}

pub fn cmd_viz_context(
    ckpt: &Path,
    image: &Path,
    scale: usize,
    channels: &[usize],
    out_dir: &Path,
) -> Result<[HeatMap; 2]> {
    let ck = checkpoint::load(ckpt)?;
    let model = ck.model()?;
    let img = read_image(image)?;
    let maps = context_heatmaps(&model, &ck.store, &img, scale, channels)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    for m in &maps {
        write_heatmap(&out_dir.join(format!("{}_s{scale}.png", m.name)), m)?;
    }
    Ok(maps)
}

/// Writes `n` synthetic samples as `<i>_1.png`, `<i>_2.png`, `<i>.flo` and
/// `<i>_valid.png`.
pub fn cmd_synth(out_dir: &Path, n: usize, size: usize, seed: u64) -> Result<()> {
    let data = generate_synthetic(n, size, seed)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    for (i, s) in data.iter().enumerate() {
        write_image(&out_dir.join(format!("{i:04}_1.png")), s.image1.tensor())?;
        write_image(&out_dir.join(format!("{i:04}_2.png")), s.image2.tensor())?;
        write_flo(&out_dir.join(format!("{i:04}.flo")), s.flow.tensor())?;
        write_mask(&out_dir.join(format!("{i:04}_valid.png")), &s.valid, size, size)?;
    }
    Ok(())
}
