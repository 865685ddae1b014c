//! Attention-memory comparison: explicit token attention against XCA.
//!
//! Token attention materializes an `N x N` matrix per head, while XCA keeps a
//! `(d/h) x (d/h)` matrix per head whatever the token count.

use alloc::collections::TryReserveError;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::gemm::{gemm, MatRef};
use crate::ops::xca::xca_forward;
use crate::params::Init;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mechanism {
    Token,
    Xca,
}

impl Mechanism {
    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Token => "token",
            Mechanism::Xca => "xca",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "token" => Some(Mechanism::Token),
            "xca" => Some(Mechanism::Xca),
            _ => None,
        }
    }
}

/// Attention-matrix element count for `n` tokens, `d` channels, `h` heads.
pub fn footprint_analytic(mechanism: Mechanism, n: u64, d: u64, h: u64) -> u64 {
    match mechanism {
        Mechanism::Token => h * n * n,
        Mechanism::Xca => h * (d / h) * (d / h),
    }
}

/// Columns `off..off + dh` of a token-major `n x d` matrix.
fn head_view(m: &[f64], off: usize, n: usize, dh: usize, d: usize) -> MatRef<'_> {
    MatRef {
        data: &m[off..],
        rows: n,
        cols: dh,
        row_stride: d,
        col_stride: 1,
    }
}

/// Multi-head `softmax(Q Kᵀ / sqrt(d_h)) V` on token-major `n x d` inputs with
/// all `h` attention matrices held at once. Fails instead of aborting when
/// the attention buffer cannot be allocated.
pub fn token_cross_attention(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    n: usize,
    d: usize,
    heads: usize,
) -> core::result::Result<Vec<f64>, TryReserveError> {
    assert!(heads > 0 && d % heads == 0, "head count must divide channels");
    assert!(q.len() == n * d && k.len() == n * d && v.len() == n * d, "inputs must be n x d");
    let dh = d / heads;
    let mut attn: Vec<f64> = Vec::new();
    attn.try_reserve_exact(heads * n * n)?;
    attn.resize(heads * n * n, 0.0);
    let mut out: Vec<f64> = Vec::new();
    out.try_reserve_exact(n * d)?;
    out.resize(n * d, 0.0);
    let scale = 1.0 / libm::sqrt(dh as f64);
    for hd in 0..heads {
        let a = &mut attn[hd * n * n..(hd + 1) * n * n];
        gemm(head_view(q, hd * dh, n, dh, d), head_view(k, hd * dh, n, dh, d).t(), 0.0, a);
        for row in a.chunks_mut(n) {
            let m = row.iter().fold(f64::NEG_INFINITY, |acc, &x| acc.max(x * scale));
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = libm::exp(*x * scale - m);
                s += *x;
            }
            for x in row.iter_mut() {
                *x /= s;
            }
        }
    }
    // Per-head products land in a strided output; accumulate head by head.
    let mut tmp = vec![0.0; n * dh];
    for hd in 0..heads {
        let a = MatRef::new(&attn[hd * n * n..(hd + 1) * n * n], n, n);
        gemm(a, head_view(v, hd * dh, n, dh, d), 0.0, &mut tmp);
        for t in 0..n {
            out[t * d + hd * dh..t * d + (hd + 1) * dh].copy_from_slice(&tmp[t * dh..(t + 1) * dh]);
        }
    }
    Ok(out)
}

/// Source of peak-allocation measurements, e.g. a counting global allocator.
pub trait PeakMeter {
    /// Starts a new measurement window at the current live size.
    fn reset(&self);
    /// Largest live size above the window's baseline, in bytes.
    fn peak_bytes(&self) -> usize;
}

#[derive(Clone, Debug, PartialEq)]
pub struct FootprintPoint {
    /// Side of the square token grid.
    pub side: usize,
    pub tokens: usize,
    pub elements: u64,
    pub peak_bytes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FootprintReport {
    pub mechanism: Mechanism,
    pub channels: usize,
    pub heads: usize,
    pub points: Vec<FootprintPoint>,
    /// Ladder sides dropped because they exceed the memory budget.
    pub truncated: Vec<usize>,
    /// Log-log slope of peak bytes against token count; needs 4 points.
    pub slope: Option<f64>,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 || xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|&x| libm::log(x)).collect();
    let ly: Vec<f64> = ys.iter().map(|&y| libm::log(y)).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

/// Predicted transient bytes of one evaluation, used for the budget check.
pub fn predicted_bytes(mechanism: Mechanism, n: usize, d: usize, heads: usize) -> usize {
    let f = core::mem::size_of::<f64>();
    match mechanism {
        Mechanism::Token => f * (heads * n * n + n * d + n * d / heads),
        Mechanism::Xca => f * (4 * d * n + 2 * d + 2 * heads * (d / heads) * (d / heads)),
    }
}

/// Measures peak transient allocation of one attention evaluation per
/// ladder size. Inputs are allocated before the window opens. Sizes whose
/// predicted footprint exceeds `budget_bytes`, or whose allocation fails,
/// end the ladder and are listed as truncated.
pub fn footprint_empirical(
    mechanism: Mechanism,
    sides: &[usize],
    channels: usize,
    heads: usize,
    budget_bytes: usize,
    meter: &dyn PeakMeter,
) -> Result<FootprintReport> {
    if heads == 0 || channels % heads != 0 {
        return Err(Error::Config("head count must divide channels".into()));
    }
    let mut report = FootprintReport {
        mechanism,
        channels,
        heads,
        points: Vec::new(),
        truncated: Vec::new(),
        slope: None,
    };
    let mut init = Init::new(7);
    for (i, &side) in sides.iter().enumerate() {
        let n = side * side;
        if predicted_bytes(mechanism, n, channels, heads) > budget_bytes {
            report.truncated.extend_from_slice(&sides[i..]);
            break;
        }
        let shape = [channels, side, side];
        let (k, q, v) = (init.normal(&shape, 1.0), init.normal(&shape, 1.0), init.normal(&shape, 1.0));
        let ok = match mechanism {
            Mechanism::Token => {
                meter.reset();
                let r = token_cross_attention(q.data(), k.data(), v.data(), n, channels, heads);
                let peak = meter.peak_bytes();
                let ok = r.is_ok();
                drop(r);
                ok.then_some(peak)
            }
            Mechanism::Xca => {
                let theta = Tensor::zeros(&[heads]);
                meter.reset();
                let r = xca_forward(&k, &q, &v, &theta, heads);
                let peak = meter.peak_bytes();
                drop(r);
                Some(peak)
            }
        };
        match ok {
            Some(peak_bytes) => report.points.push(FootprintPoint {
                side,
                tokens: n,
                elements: footprint_analytic(mechanism, n as u64, channels as u64, heads as u64),
                peak_bytes,
            }),
            None => {
                report.truncated.extend_from_slice(&sides[i..]);
                break;
            }
        }
    }
    if report.points.len() >= 4 {
        let xs: Vec<f64> = report.points.iter().map(|p| p.tokens as f64).collect();
        let ys: Vec<f64> = report.points.iter().map(|p| p.peak_bytes as f64).collect();
        report.slope = loglog_slope(&xs, &ys);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_counts() {
        for n in [1u64, 64, 1024, 65536] {
            assert_eq!(footprint_analytic(Mechanism::Xca, n, 256, 8), 8192);
        }
        assert_eq!(
            footprint_analytic(Mechanism::Token, 200, 64, 2) * 4,
            footprint_analytic(Mechanism::Token, 400, 64, 2)
        );
    }

    #[test]
    fn single_token_returns_value() {
        let v = [0.3, -1.2, 4.0];
        let out = token_cross_attention(&[1.0, 2.0, 3.0], &[-1.0, 0.5, 2.0], &v, 1, 3, 1).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x * x).collect();
        assert!((loglog_slope(&xs, &ys).unwrap() - 2.0).abs() < 1e-12);
    }
}
