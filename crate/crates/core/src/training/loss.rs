//! Multi-scale multi-iteration flow supervision.

use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossKind {
    /// Mean end-point error.
    L2,
    /// Mean of `(epe + eps)^q`.
    Robust { eps: f64, q: f64 },
}

impl LossKind {
    pub const DEFAULT_ROBUST: LossKind = LossKind::Robust { eps: 0.01, q: 0.7 };

    fn penalty(&self, e: f64) -> f64 {
        match *self {
            LossKind::L2 => e,
            LossKind::Robust { eps, q } => libm::pow(e + eps, q),
        }
    }

    fn penalty_grad(&self, e: f64) -> f64 {
        match *self {
            LossKind::L2 => 1.0,
            LossKind::Robust { eps, q } => q * libm::pow(e + eps, q - 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossKind::L2 => Ok(()),
            LossKind::Robust { eps, q } if eps > 0.0 && q > 0.0 && q <= 1.0 => Ok(()),
            LossKind::Robust { .. } => Err(Error::Config(
                "robust loss needs eps > 0 and exponent in (0, 1]".into(),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    /// One weight per prediction in flattened (scale, iteration) order.
    pub weights: Vec<f64>,
}

impl LossConfig {
    pub fn new(kind: LossKind, weights: Vec<f64>) -> Result<Self> {
        kind.validate()?;
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Config("loss weights must be positive".into()));
        }
        if weights.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::Config("loss weights must be strictly increasing".into()));
        }
        Ok(Self { kind, weights })
    }
}

/// Geometric weights `gamma^(K-1-k)` for `K` predictions.
pub fn make_loss_weights(count: usize, gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Config("loss weight decay must lie in (0, 1)".into()));
    }
    Ok((0..count)
        .map(|k| libm::pow(gamma, (count - 1 - k) as f64))
        .collect())
}

/// Total prediction count of a schedule.
pub fn prediction_count(schedule: &[usize]) -> usize {
    schedule.iter().sum()
}

fn check_inputs(preds: &[&Tensor], gt: &Tensor, valid: Option<&[bool]>, weights: &[f64]) -> Result<()> {
    if preds.len() != weights.len() {
        return Err(Error::LossWeights {
            predictions: preds.len(),
            weights: weights.len(),
        });
    }
    let (c, h, w) = gt.dims3();
    if c != 2 {
        return Err(Error::shape("multiscale_loss", "ground truth must have 2 channels"));
    }
    if preds.iter().any(|p| p.shape() != gt.shape()) {
        return Err(Error::shape(
            "multiscale_loss",
            "predictions must be upsampled to ground-truth resolution",
        ));
    }
    if valid.is_some_and(|v| v.len() != h * w) {
        return Err(Error::shape("multiscale_loss", "validity mask size mismatch"));
    }
    Ok(())
}

fn epe_at(pred: &[f64], gt: &[f64], n: usize, p: usize) -> (f64, f64, f64) {
    let du = pred[p] - gt[p];
    let dv = pred[n + p] - gt[n + p];
    (libm::sqrt(du * du + dv * dv), du, dv)
}

/// Value of the weighted multi-prediction loss on plain tensors.
pub fn flow_loss_value(
    preds: &[&Tensor],
    gt: &Tensor,
    valid: Option<&[bool]>,
    weights: &[f64],
    kind: LossKind,
) -> Result<f64> {
    check_inputs(preds, gt, valid, weights)?;
    let (_, h, w) = gt.dims3();
    let n = h * w;
    let count = valid.map_or(n, |v| v.iter().filter(|&&b| b).count());
    if count == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (pred, &wk) in preds.iter().zip(weights) {
        let mut s = 0.0;
        for p in 0..n {
            if valid.is_none_or(|v| v[p]) {
                s += kind.penalty(epe_at(pred.data(), gt.data(), n, p).0);
            }
        }
        total += wk * s / count as f64;
    }
    Ok(total)
}

/// Gradient of [`flow_loss_value`] w.r.t. each prediction, times `seed`.
/// At zero error the L2 kind uses the zero subgradient.
pub fn flow_loss_grads(
    preds: &[&Tensor],
    gt: &Tensor,
    valid: Option<&[bool]>,
    weights: &[f64],
    kind: LossKind,
    seed: f64,
) -> Vec<Tensor> {
    let (_, h, w) = gt.dims3();
    let n = h * w;
    let count = valid.map_or(n, |v| v.iter().filter(|&&b| b).count());
    preds
        .iter()
        .zip(weights)
        .map(|(pred, &wk)| {
            let mut g = Tensor::zeros(gt.shape());
            if count == 0 {
                return g;
            }
            let scale = seed * wk / count as f64;
            let gd = g.data_mut();
            for p in 0..n {
                if valid.is_some_and(|v| !v[p]) {
                    continue;
                }
                let (e, du, dv) = epe_at(pred.data(), gt.data(), n, p);
                if e > 0.0 {
                    let f = scale * kind.penalty_grad(e) / e;
                    gd[p] = f * du;
                    gd[n + p] = f * dv;
                }
            }
            g
        })
        .collect()
}

/// Records the multi-scale loss on the tape; returns a scalar node.
pub fn multiscale_loss(
    tape: &mut Tape<'_>,
    predictions: &[Var],
    gt: &Tensor,
    valid: Option<&[bool]>,
    cfg: &LossConfig,
) -> Result<Var> {
    {
        let preds: Vec<&Tensor> = predictions.iter().map(|&v| tape.value(v)).collect();
        check_inputs(&preds, gt, valid, &cfg.weights)?;
    }
    Ok(tape.flow_loss(predictions, gt.clone(), valid.map(|v| v.to_vec()), cfg.weights.clone(), cfg.kind))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn flow(h: usize, w: usize, u: f64, v: f64) -> Tensor {
        Tensor::from_fn(&[2, h, w], |i| if i < h * w { u } else { v })
    }

    #[test]
    fn exact_prediction_gives_zero() {
        let gt = flow(4, 4, 1.5, -2.0);
        let l = flow_loss_value(&[&gt, &gt], &gt, None, &[0.8, 1.0], LossKind::L2).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn pythagorean_offset() {
        let gt = flow(4, 4, 0.0, 0.0);
        let pred = flow(4, 4, 3.0, 4.0);
        let l = flow_loss_value(&[&pred], &gt, None, &[1.0], LossKind::L2).unwrap();
        assert!((l - 5.0).abs() < 1e-12);
    }

    #[test]
    fn geometric_weights() {
        let w = make_loss_weights(3, 0.8).unwrap();
        assert!((w[0] - 0.64).abs() < 1e-15 && (w[1] - 0.8).abs() < 1e-15 && w[2] == 1.0);
        assert!(make_loss_weights(3, 1.0).is_err());
        assert!(make_loss_weights(3, 0.0).is_err());
    }

    #[test]
    fn weight_count_mismatch() {
        let gt = flow(2, 2, 0.0, 0.0);
        let err = flow_loss_value(&[&gt], &gt, None, &[0.5, 1.0], LossKind::L2).unwrap_err();
        assert!(matches!(err, Error::LossWeights { predictions: 1, weights: 2 }));
    }

    #[test]
    fn masked_pixel_is_ignored() {
        let gt = flow(2, 2, 0.0, 0.0);
        let mut a = gt.clone();
        let mut b = gt.clone();
        a.data_mut()[3] = 10.0;
        b.data_mut()[3] = -40.0;
        a.data_mut()[0] = 1.0;
        b.data_mut()[0] = 1.0;
        let valid = vec![true, true, true, false];
        let la = flow_loss_value(&[&a], &gt, Some(&valid), &[1.0], LossKind::DEFAULT_ROBUST).unwrap();
        let lb = flow_loss_value(&[&b], &gt, Some(&valid), &[1.0], LossKind::DEFAULT_ROBUST).unwrap();
        assert_eq!(la, lb);
    }

    #[test]
    fn config_rejects_non_increasing() {
        assert!(LossConfig::new(LossKind::L2, vec![1.0, 1.0]).is_err());
        assert!(LossConfig::new(LossKind::L2, vec![0.5, 1.0]).is_ok());
        assert!(LossConfig::new(LossKind::Robust { eps: 0.0, q: 0.5 }, vec![1.0]).is_err());
    }
}
