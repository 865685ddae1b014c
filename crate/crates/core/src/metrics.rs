//! End-point error and KITTI outlier metrics with matched/unmatched splits.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// KITTI outlier thresholds: absolute px and fraction of the gt magnitude.
pub const FL_ABS_THRESHOLD: f64 = 3.0;
pub const FL_REL_THRESHOLD: f64 = 0.05;

fn check(flow: &Tensor, gt: &Tensor, mask: Option<&[bool]>) -> Result<usize> {
    if flow.shape() != gt.shape() || gt.shape().len() != 3 || gt.shape()[0] != 2 {
        return Err(Error::shape("metrics", "flow and ground truth must both be [2, H, W]"));
    }
    let n = gt.shape()[1] * gt.shape()[2];
    if mask.is_some_and(|m| m.len() != n) {
        return Err(Error::shape("metrics", "mask size mismatch"));
    }
    Ok(n)
}

/// Per-pixel end-point errors.
pub fn epe_map(flow: &Tensor, gt: &Tensor) -> Result<Vec<f64>> {
    let n = check(flow, gt, None)?;
    let (f, g) = (flow.data(), gt.data());
    Ok((0..n)
        .map(|p| libm::hypot(f[p] - g[p], f[n + p] - g[n + p]))
        .collect())
}

/// Mean `‖flow − gt‖₂` over masked pixels; 0 when the mask is empty.
pub fn aepe(flow: &Tensor, gt: &Tensor, mask: Option<&[bool]>) -> Result<f64> {
    check(flow, gt, mask)?;
    let epe = epe_map(flow, gt)?;
    let (mut sum, mut count) = (0.0, 0usize);
    for (p, e) in epe.iter().enumerate() {
        if mask.is_none_or(|m| m[p]) {
            sum += e;
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Whether an error `epe` against a gt vector of length `gt_norm` is a KITTI outlier.
pub fn is_outlier(epe: f64, gt_norm: f64) -> bool {
    epe > FL_ABS_THRESHOLD && epe > FL_REL_THRESHOLD * gt_norm
}

/// Outlier percentage over masked pixels.
pub fn fl_error(flow: &Tensor, gt: &Tensor, mask: Option<&[bool]>) -> Result<f64> {
    let n = check(flow, gt, mask)?;
    let epe = epe_map(flow, gt)?;
    let g = gt.data();
    let (mut out, mut count) = (0usize, 0usize);
    for p in 0..n {
        if mask.is_none_or(|m| m[p]) {
            count += 1;
            if is_outlier(epe[p], libm::hypot(g[p], g[n + p])) {
                out += 1;
            }
        }
    }
    Ok(if count == 0 {
        0.0
    } else {
        100.0 * out as f64 / count as f64
    })
}

/// Evaluates `metric` on the matched (`!occluded`) and unmatched
/// (`occluded`) parts of `valid`.
pub fn split_regions<F>(metric: F, valid: &[bool], occluded: &[bool]) -> Result<(f64, f64)>
where
    F: Fn(&[bool]) -> Result<f64>,
{
    if valid.len() != occluded.len() {
        return Err(Error::shape("split_regions", "mask size mismatch"));
    }
    let matched: Vec<bool> = valid.iter().zip(occluded).map(|(&v, &o)| v && !o).collect();
    let unmatched: Vec<bool> = valid.iter().zip(occluded).map(|(&v, &o)| v && o).collect();
    Ok((metric(&matched)?, metric(&unmatched)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub aepe_all: f64,
    pub aepe_matched: f64,
    /// Absent without an occlusion mask.
    pub aepe_unmatched: Option<f64>,
    pub fl_all: f64,
    /// Fl over non-occluded pixels.
    pub fl_noc: f64,
    pub n_all: usize,
    pub n_matched: usize,
    pub n_unmatched: Option<usize>,
}

/// All metrics for one flow field. Without `occluded`, every valid pixel
/// counts as matched.
pub fn evaluate(flow: &Tensor, gt: &Tensor, valid: Option<&[bool]>, occluded: Option<&[bool]>) -> Result<EvalResult> {
    let n = check(flow, gt, valid)?;
    if occluded.is_some_and(|o| o.len() != n) {
        return Err(Error::shape("evaluate", "occlusion mask size mismatch"));
    }
    let valid: Vec<bool> = valid.map_or_else(|| alloc::vec![true; n], |v| v.to_vec());
    let n_all = valid.iter().filter(|&&b| b).count();
    let aepe_all = aepe(flow, gt, Some(&valid))?;
    let fl_all = fl_error(flow, gt, Some(&valid))?;
    Ok(match occluded {
        None => EvalResult {
            aepe_all,
            aepe_matched: aepe_all,
            aepe_unmatched: None,
            fl_all,
            fl_noc: fl_all,
            n_all,
            n_matched: n_all,
            n_unmatched: None,
        },
        Some(occ) => {
            let (am, au) = split_regions(|m| aepe(flow, gt, Some(m)), &valid, occ)?;
            let (fm, _) = split_regions(|m| fl_error(flow, gt, Some(m)), &valid, occ)?;
            let n_unmatched = valid.iter().zip(occ).filter(|(&v, &o)| v && o).count();
            EvalResult {
                aepe_all,
                aepe_matched: am,
                aepe_unmatched: Some(au),
                fl_all,
                fl_noc: fm,
                n_all,
                n_matched: n_all - n_unmatched,
                n_unmatched: Some(n_unmatched),
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn field(h: usize, w: usize, u: f64, v: f64) -> Tensor {
        Tensor::from_fn(&[2, h, w], |i| if i < h * w { u } else { v })
    }

    #[test]
    fn aepe_trivial_cases() {
        let gt = field(4, 5, 1.0, -2.0);
        assert_eq!(aepe(&gt, &gt, None).unwrap(), 0.0);
        let off = field(4, 5, 4.0, 2.0);
        assert!((aepe(&off, &gt, None).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(aepe(&off, &gt, Some(&vec![false; 20])).unwrap(), 0.0);
    }

    #[test]
    fn fl_definition() {
        // gt magnitude 100, error 4: inside 5% of |gt|.
        let gt = field(1, 1, 100.0, 0.0);
        let est = field(1, 1, 104.0, 0.0);
        assert_eq!(fl_error(&est, &gt, None).unwrap(), 0.0);
        let gt = field(1, 1, 10.0, 0.0);
        let est = field(1, 1, 14.0, 0.0);
        assert_eq!(fl_error(&est, &gt, None).unwrap(), 100.0);
        assert_eq!(fl_error(&gt, &gt, None).unwrap(), 0.0);
    }

    #[test]
    fn split_masks() {
        let gt = field(2, 2, 0.0, 0.0);
        let est = Tensor::from_vec(&[2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0]);
        let valid = [true; 4];
        let metric = |m: &[bool]| aepe(&est, &gt, Some(m));
        let (m, u) = split_regions(metric, &valid, &[false; 4]).unwrap();
        assert_eq!((m, u), (2.5, 0.0));
        let (m, u) = split_regions(metric, &valid, &[true; 4]).unwrap();
        assert_eq!((m, u), (0.0, 2.5));
        let r = evaluate(&est, &gt, None, Some(&[true, false, false, true])).unwrap();
        assert_eq!((r.n_matched, r.n_unmatched), (2, Some(2)));
        assert!((r.aepe_matched * 2.0 + r.aepe_unmatched.unwrap() * 2.0 - r.aepe_all * 4.0).abs() < 1e-12);
    }

    #[test]
    fn missing_occlusion_mask_leaves_unmatched_absent() {
        let gt = field(2, 2, 1.0, 1.0);
        let r = evaluate(&gt, &gt, None, None).unwrap();
        assert_eq!(r.aepe_unmatched, None);
        assert_eq!(r.n_matched, 4);
    }
}
