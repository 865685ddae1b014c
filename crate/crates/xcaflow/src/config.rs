//! Declarative training configuration (TOML).
//!
//! ```toml
//! seed = 0                      # model initialization
//!
//! [model]
//! preset = "toy"                # toy | tiny | default
//! num_scales = 3                # optional override
//!
//! [data]
//! samples = 20
//! size = 64
//! seed = 1
//!
//! [train]
//! steps = 2000
//! schedule = [2, 3, 3]          # or a preset name: "train" | "sintel" | "kitti"
//! loss = "l2"                   # l2 | robust
//! robust_eps = 0.01
//! robust_q = 0.7
//! gamma = 0.8
//! clip_norm = 1.0
//! batch_size = 1
//! eval_every = 100
//! shuffle_seed = 0
//!
//! [train.lr]
//! kind = "one_cycle"            # constant | one_cycle | constant_then_decay
//! max_lr = 4e-4
//! pct_start = 0.05
//! final_factor = 0.05
//!
//! [output]
//! checkpoint = "toy.ckpt"
//! loss_csv = "loss.csv"
//! ```

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use xcaflow_core::training::{LossKind, LrSchedule, TrainConfig};
use xcaflow_core::{IterationSchedule, ModelConfig, SchedulePreset};

use crate::error::{DataError, UsageError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub data: DataSection,
    pub train: TrainSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: String,
    pub num_scales: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: "toy".into(),
            num_scales: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub samples: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            samples: 20,
            size: 64,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleSpec {
    Iters(Vec<usize>),
    Preset(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub schedule: ScheduleSpec,
    #[serde(default = "default_loss")]
    pub loss: String,
    #[serde(default = "default_eps")]
    pub robust_eps: f64,
    #[serde(default = "default_q")]
    pub robust_q: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default = "default_one")]
    pub batch_size: usize,
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default)]
    pub shuffle_seed: u64,
    pub lr: LrSection,
}

fn default_loss() -> String {
    "l2".into()
}
fn default_eps() -> f64 {
    0.01
}
fn default_q() -> f64 {
    0.7
}
fn default_gamma() -> f64 {
    0.8
}
fn default_clip() -> f64 {
    1.0
}
fn default_one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSection {
    Constant { lr: f64 },
    OneCycle { max_lr: f64, pct_start: f64, final_factor: f64 },
    ConstantThenDecay { lr: f64, decay_start: f64, final_factor: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            checkpoint: "toy.ckpt".into(),
            loss_csv: "loss.csv".into(),
        }
    }
}

impl ToyConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| UsageError::new(format!("invalid training config: {e}")).into())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError::new(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut cfg = match self.model.preset.as_str() {
            "toy" => ModelConfig::toy(),
            "tiny" => ModelConfig::tiny(3),
            "default" => ModelConfig::default(),
            other => return Err(UsageError::new(format!("unknown model preset '{other}'")).into()),
        };
        if let Some(s) = self.model.num_scales {
            cfg.num_scales = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let num_scales = self.model_config()?.num_scales;
        let loss = match t.loss.as_str() {
            "l2" => LossKind::L2,
            "robust" => LossKind::Robust {
                eps: t.robust_eps,
                q: t.robust_q,
            },
            other => return Err(UsageError::new(format!("unknown loss '{other}'")).into()),
        };
        let lr = match t.lr {
            LrSection::Constant { lr } => LrSchedule::Constant { lr },
            LrSection::OneCycle {
                max_lr,
                pct_start,
                final_factor,
            } => LrSchedule::OneCycle {
                max_lr,
                pct_start,
                final_factor,
            },
            LrSection::ConstantThenDecay {
                lr,
                decay_start,
                final_factor,
            } => LrSchedule::ConstantThenDecay {
                lr,
                decay_start,
                final_factor,
            },
        };
        Ok(TrainConfig {
            steps: t.steps,
            lr,
            loss,
            gamma: t.gamma,
            schedule: resolve_schedule(&t.schedule, num_scales)?,
            clip_norm: t.clip_norm,
            batch_size: t.batch_size,
            eval_every: t.eval_every,
            shuffle_seed: t.shuffle_seed,
        })
    }
}

pub fn resolve_schedule(spec: &ScheduleSpec, num_scales: usize) -> Result<IterationSchedule> {
    match spec {
        ScheduleSpec::Iters(v) => Ok(IterationSchedule::new(v.clone())?),
        ScheduleSpec::Preset(name) => {
            let p = SchedulePreset::parse(name)
                .ok_or_else(|| UsageError::new(format!("unknown schedule preset '{name}'")))?;
            Ok(IterationSchedule::preset(p, num_scales)?)
        }
    }
}

/// Parses `"a,b,c"` into an iteration list.
pub fn parse_iters(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| UsageError::new(format!("bad iteration count '{p}' in '{s}'")).into())
        })
        .collect()
}

/// Writes the per-step loss curve.
pub fn write_loss_csv(path: &Path, records: &[xcaflow_core::training::StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| DataError::new(format!("{}: {e}", path.display())))?;
    w.write_record(["step", "loss", "lr", "grad_norm", "aepe"])?;
    for r in records {
        w.write_record([
            r.step.to_string(),
            format!("{:.9e}", r.loss),
            format!("{:.6e}", r.lr),
            format!("{:.6e}", r.grad_norm),
            r.aepe.map_or_else(String::new, |a| format!("{a:.6}")),
        ])?;
    }
    Ok(w.flush()?)
}
