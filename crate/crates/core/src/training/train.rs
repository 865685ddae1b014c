//! Minimal training loop for desk-scale overfitting runs.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{make_loss_weights, multiscale_loss, LossConfig, LossKind};
use super::optim::{clip_grad_norm, Adam, LrSchedule};
use super::synthetic::SyntheticSample;
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::estimator::{EstimateOptions, FlowModel, IterationSchedule};
use crate::metrics::aepe;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Step count at which training stops (absolute, so resumed runs stop
    /// at the same point).
    pub steps: usize,
    pub lr: LrSchedule,
    pub loss: LossKind,
    /// Geometric decay of the per-prediction loss weights.
    pub gamma: f64,
    pub schedule: IterationSchedule,
    pub clip_norm: f64,
    pub batch_size: usize,
    /// Evaluate training-set AEPE every this many steps; 0 disables.
    pub eval_every: usize,
    pub shuffle_seed: u64,
}

impl TrainConfig {
    pub fn validate(&self, model: &FlowModel) -> Result<()> {
        self.lr.validate()?;
        self.loss.validate()?;
        if self.schedule.len() != model.config.num_scales {
            return Err(Error::Schedule {
                expected: model.config.num_scales,
                got: self.schedule.len(),
            });
        }
        if self.batch_size == 0 || !(self.clip_norm > 0.0) {
            return Err(Error::Config("batch size and clip norm must be positive".into()));
        }
        make_loss_weights(1, self.gamma).map(|_| ())
    }
}

/// Resumable optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: usize,
    pub optimizer: Adam,
}

impl TrainState {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            step: 0,
            optimizer: Adam::new(store),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// 1-based index of the completed step.
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub aepe: Option<f64>,
}

/// Dataset index used at position `k` of the sample stream.
fn sample_index(k: usize, n: usize, seed: u64) -> usize {
    let epoch = k / n;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    perm.shuffle(&mut rng);
    perm[k % n]
}

/// Final-prediction AEPE averaged over samples (all pixels).
pub fn evaluate_aepe(
    model: &FlowModel,
    store: &ParamStore,
    data: &[SyntheticSample],
    schedule: &IterationSchedule,
) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in data {
        let flow = model.infer(store, &s.image1, &s.image2, schedule)?;
        total += aepe(flow.tensor(), s.flow.tensor(), None)?;
    }
    Ok(total / data.len() as f64)
}

/// Loss and parameter gradients for one sample.
pub fn sample_gradients(
    model: &FlowModel,
    store: &ParamStore,
    sample: &SyntheticSample,
    schedule: &IterationSchedule,
    loss: &LossConfig,
) -> Result<(f64, Vec<Option<Tensor>>)> {
    let mut tape = Tape::new(store);
    let est = model.estimate_flow(&mut tape, &sample.image1, &sample.image2, schedule, EstimateOptions::default())?;
    let l = multiscale_loss(&mut tape, &est.predictions, sample.flow.tensor(), None, loss)?;
    let value = tape.value(l).data()[0];
    Ok((value, tape.backward(l).into_param_grads()))
}

/// Runs from `state.step` to `cfg.steps`, calling `on_step` after each step.
pub fn train_toy(
    model: &FlowModel,
    store: &mut ParamStore,
    data: &[SyntheticSample],
    cfg: &TrainConfig,
    state: &mut TrainState,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<Vec<StepRecord>> {
    cfg.validate(model)?;
    if data.is_empty() && state.step < cfg.steps {
        return Err(Error::Config("training needs at least one sample".into()));
    }
    let weights = make_loss_weights(cfg.schedule.total(), cfg.gamma)?;
    let loss_cfg = LossConfig::new(cfg.loss, weights)?;
    let mut records = Vec::new();
    while state.step < cfg.steps {
        let step = state.step;
        let mut grads: Vec<Option<Tensor>> = alloc::vec![None; store.len()];
        let mut loss = 0.0;
        for j in 0..cfg.batch_size {
            let idx = sample_index(step * cfg.batch_size + j, data.len(), cfg.shuffle_seed);
            let (l, g) = sample_gradients(model, store, &data[idx], &cfg.schedule, &loss_cfg)?;
            loss += l / cfg.batch_size as f64;
            for (acc, gi) in grads.iter_mut().zip(g) {
                let Some(gi) = gi else { continue };
                match acc {
                    Some(a) => a.add_assign(&gi),
                    None => *acc = Some(gi),
                }
            }
        }
        if cfg.batch_size > 1 {
            for g in grads.iter_mut().flatten() {
                *g = g.scaled(1.0 / cfg.batch_size as f64);
            }
        }
        let grad_norm = clip_grad_norm(&mut grads, cfg.clip_norm);
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(Error::Diverged { step: step + 1 });
        }
        let lr = cfg.lr.at(step, cfg.steps);
        state.optimizer.step(store, &grads, lr)?;
        state.step += 1;
        let aepe = if cfg.eval_every > 0 && (state.step % cfg.eval_every == 0 || state.step == cfg.steps) {
            Some(evaluate_aepe(model, store, data, &cfg.schedule)?)
        } else {
            None
        };
        let rec = StepRecord {
            step: state.step,
            loss,
            lr,
            grad_norm,
            aepe,
        };
        on_step(&rec);
        records.push(rec);
    }
    Ok(records)
}
