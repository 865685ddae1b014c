//! Adam with global-norm gradient clipping and learning-rate schedules.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    Constant { lr: f64 },
    /// Linear warm-up to `max_lr` over `pct_start` of the run, then linear
    /// decay to `max_lr * final_factor`.
    OneCycle { max_lr: f64, pct_start: f64, final_factor: f64 },
    /// Constant until `decay_start` (fraction of the run), then linear decay
    /// to `lr * final_factor`.
    ConstantThenDecay { lr: f64, decay_start: f64, final_factor: f64 },
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LrSchedule::Constant { lr } => lr > 0.0,
            LrSchedule::OneCycle {
                max_lr,
                pct_start,
                final_factor,
            } => max_lr > 0.0 && (0.0..1.0).contains(&pct_start) && (0.0..=1.0).contains(&final_factor),
            LrSchedule::ConstantThenDecay {
                lr,
                decay_start,
                final_factor,
            } => lr > 0.0 && (0.0..=1.0).contains(&decay_start) && (0.0..=1.0).contains(&final_factor),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config("learning-rate schedule parameters out of range".into()))
        }
    }

    /// Learning rate at `step` of a `total`-step run.
    pub fn at(&self, step: usize, total: usize) -> f64 {
        let t = if total <= 1 {
            0.0
        } else {
            step as f64 / (total - 1) as f64
        };
        let lerp = |a: f64, b: f64, f: f64| a + (b - a) * f.clamp(0.0, 1.0);
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::OneCycle {
                max_lr,
                pct_start,
                final_factor,
            } => {
                if t < pct_start {
                    lerp(0.04 * max_lr, max_lr, t / pct_start)
                } else {
                    lerp(max_lr, max_lr * final_factor, (t - pct_start) / (1.0 - pct_start))
                }
            }
            LrSchedule::ConstantThenDecay {
                lr,
                decay_start,
                final_factor,
            } => {
                if t <= decay_start || decay_start >= 1.0 {
                    lr
                } else {
                    lerp(lr, lr * final_factor, (t - decay_start) / (1.0 - decay_start))
                }
            }
        }
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let norm = libm::sqrt(
        grads
            .iter()
            .flatten()
            .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum(),
    );
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.entries().iter().map(|e| Tensor::zeros(e.value.shape())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update; parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>], lr: f64) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::shape("adam", "gradient/state count does not match the parameter store"));
        }
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let p = store.get_mut(id);
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((pj, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                let gj = gj + self.weight_decay * *pj;
                *mj = self.beta1 * *mj + (1.0 - self.beta1) * gj;
                *vj = self.beta2 * *vj + (1.0 - self.beta2) * gj * gj;
                *pj -= lr * (*mj / bc1) / (libm::sqrt(*vj / bc2) + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = alloc::vec![Some(Tensor::full(&[4], 3.0)), None, Some(Tensor::full(&[1], 8.0))];
        let before = clip_grad_norm(&mut g, 1.0);
        assert!((before - 10.0).abs() < 1e-12);
        let after = clip_grad_norm(&mut g, 1.0);
        assert!((after - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::from_vec(&[2], alloc::vec![3.0, -2.0]));
        let mut opt = Adam::new(&store);
        for _ in 0..2000 {
            let g = store.get(id).scaled(2.0);
            opt.step(&mut store, &[Some(g)], 0.01).unwrap();
        }
        assert!(store.get(id).max_abs() < 1e-3);
    }

    #[test]
    fn schedules_hit_their_endpoints() {
        let s = LrSchedule::OneCycle {
            max_lr: 1e-3,
            pct_start: 0.1,
            final_factor: 0.01,
        };
        assert!((s.at(999, 1000) - 1e-5).abs() < 1e-12);
        let peak = (0..1000).map(|i| s.at(i, 1000)).fold(0.0, f64::max);
        assert!((peak - 1e-3).abs() < 1e-5);
        let c = LrSchedule::ConstantThenDecay {
            lr: 1.0,
            decay_start: 0.5,
            final_factor: 0.1,
        };
        assert_eq!(c.at(100, 1000), 1.0);
        assert!((c.at(999, 1000) - 0.1).abs() < 1e-12);
    }
}
