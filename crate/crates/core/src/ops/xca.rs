//! Cross-covariance attention.
//!
//! With keys, queries and values stored as `d x N` token matrices and split
//! into `h` contiguous channel heads of width `d/h`, each head computes
//!
//! ```text
//! A = softmax_over_key_channels( K̂ Q̂ᵀ / τ )    // (d/h) x (d/h)
//! out = Aᵀ V
//! ```
//!
//! where `K̂`, `Q̂` have each channel row L2-normalized over the `N` tokens.
//! Every column `j` of `A` sums to one, and output channel `j` is the convex
//! combination `Σ_i A[i][j] V_i` of the head's value channels. The attention
//! matrix never depends on `N`.

use alloc::vec;
use alloc::vec::Vec;

use super::gemm::{gemm, MatRef};
use crate::tensor::Tensor;

/// Floor applied to channel norms before dividing.
pub const XCA_NORM_EPS: f64 = 1e-6;

pub struct XcaCache {
    pub khat: Vec<f64>,
    pub qhat: Vec<f64>,
    pub knorm: Vec<f64>,
    pub qnorm: Vec<f64>,
    /// Softmax weights, `heads * dh * dh`, row `i` = key channel.
    pub attn: Vec<f64>,
    /// Pre-softmax logits `K̂ Q̂ᵀ / τ`, same layout as `attn`.
    pub logits: Vec<f64>,
}

fn normalize_rows(x: &[f64], rows: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; rows * n];
    let mut norms = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * n..(r + 1) * n];
        let nrm = libm::sqrt(row.iter().map(|v| v * v).sum::<f64>());
        let denom = nrm.max(XCA_NORM_EPS);
        norms[r] = nrm;
        for (o, v) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
            *o = v / denom;
        }
    }
    (out, norms)
}

/// Per-head temperatures `τ = exp(log_temperature)`.
pub fn temperatures(log_temperature: &Tensor) -> Vec<f64> {
    log_temperature.data().iter().map(|&t| libm::exp(t)).collect()
}

/// `k`, `q`, `v` are `[d, H, W]`; `log_temperature` has one entry per head.
pub fn xca_forward(
    k: &Tensor,
    q: &Tensor,
    v: &Tensor,
    log_temperature: &Tensor,
    heads: usize,
) -> (Tensor, XcaCache) {
    let (d, h, w) = k.dims3();
    let n = h * w;
    assert_eq!(q.shape(), k.shape(), "xca key/query shape mismatch");
    assert_eq!(v.shape(), k.shape(), "xca value shape mismatch");
    assert!(heads > 0 && d % heads == 0, "head count must divide channels");
    assert_eq!(log_temperature.len(), heads, "one temperature per head");
    let dh = d / heads;
    let taus = temperatures(log_temperature);
    let (khat, knorm) = normalize_rows(k.data(), d, n);
    let (qhat, qnorm) = normalize_rows(q.data(), d, n);
    let mut logits = vec![0.0; heads * dh * dh];
    let mut attn = vec![0.0; heads * dh * dh];
    let mut out = vec![0.0; d * n];
    for hd in 0..heads {
        let rows = hd * dh * n..(hd + 1) * dh * n;
        let block = hd * dh * dh..(hd + 1) * dh * dh;
        let lg = &mut logits[block.clone()];
        gemm(
            MatRef::new(&khat[rows.clone()], dh, n),
            MatRef::new(&qhat[rows.clone()], dh, n).t(),
            0.0,
            lg,
        );
        let inv_tau = 1.0 / taus[hd];
        lg.iter_mut().for_each(|v| *v *= inv_tau);
        let a = &mut attn[block.clone()];
        // Softmax down each column j over key channels i.
        for j in 0..dh {
            let mut mx = f64::NEG_INFINITY;
            for i in 0..dh {
                mx = mx.max(lg[i * dh + j]);
            }
            let mut s = 0.0;
            for i in 0..dh {
                let e = libm::exp(lg[i * dh + j] - mx);
                a[i * dh + j] = e;
                s += e;
            }
            for i in 0..dh {
                a[i * dh + j] /= s;
            }
        }
        gemm(
            MatRef::new(a, dh, dh).t(),
            MatRef::new(&v.data()[rows.clone()], dh, n),
            0.0,
            &mut out[rows],
        );
    }
    (
        Tensor::from_vec(&[d, h, w], out),
        XcaCache {
            khat,
            qhat,
            knorm,
            qnorm,
            attn,
            logits,
        },
    )
}

pub struct XcaGrads {
    pub dk: Tensor,
    pub dq: Tensor,
    pub dv: Tensor,
    pub dlog_temperature: Tensor,
}

fn normalize_backward(xhat: &[f64], norms: &[f64], dxhat: &[f64], rows: usize, n: usize) -> Vec<f64> {
    let mut dx = vec![0.0; rows * n];
    for r in 0..rows {
        let span = r * n..(r + 1) * n;
        let xr = &xhat[span.clone()];
        let gr = &dxhat[span.clone()];
        if norms[r] > XCA_NORM_EPS {
            let proj: f64 = xr.iter().zip(gr).map(|(a, b)| a * b).sum();
            let inv = 1.0 / norms[r];
            for ((o, x), g) in dx[span].iter_mut().zip(xr).zip(gr) {
                *o = (g - x * proj) * inv;
            }
        } else {
            let inv = 1.0 / XCA_NORM_EPS;
            for (o, g) in dx[span].iter_mut().zip(gr) {
                *o = g * inv;
            }
        }
    }
    dx
}

pub fn xca_backward(
    v: &Tensor,
    log_temperature: &Tensor,
    heads: usize,
    cache: &XcaCache,
    dout: &Tensor,
) -> XcaGrads {
    let (d, h, w) = v.dims3();
    let n = h * w;
    let dh = d / heads;
    let taus = temperatures(log_temperature);
    let g = dout.data();
    let mut dv = vec![0.0; d * n];
    let mut dkhat = vec![0.0; d * n];
    let mut dqhat = vec![0.0; d * n];
    let mut dlogt = vec![0.0; heads];
    let mut da = vec![0.0; dh * dh];
    let mut dl = vec![0.0; dh * dh];
    for hd in 0..heads {
        let rows = hd * dh * n..(hd + 1) * dh * n;
        let block = hd * dh * dh..(hd + 1) * dh * dh;
        let a = &cache.attn[block.clone()];
        let lg = &cache.logits[block];
        let gh = &g[rows.clone()];
        // dV = A G
        gemm(MatRef::new(a, dh, dh), MatRef::new(gh, dh, n), 0.0, &mut dv[rows.clone()]);
        // dA[i][j] = <V_i, G_j>
        gemm(
            MatRef::new(&v.data()[rows.clone()], dh, n),
            MatRef::new(gh, dh, n).t(),
            0.0,
            &mut da,
        );
        // Column softmax backward.
        for j in 0..dh {
            let s: f64 = (0..dh).map(|i| a[i * dh + j] * da[i * dh + j]).sum();
            for i in 0..dh {
                dl[i * dh + j] = a[i * dh + j] * (da[i * dh + j] - s);
            }
        }
        // logits = S / τ with τ = exp(θ): dθ = -Σ logits ⊙ dL.
        dlogt[hd] = -lg.iter().zip(&dl).map(|(l, d)| l * d).sum::<f64>();
        let inv_tau = 1.0 / taus[hd];
        dl.iter_mut().for_each(|x| *x *= inv_tau);
        gemm(
            MatRef::new(&dl, dh, dh),
            MatRef::new(&cache.qhat[rows.clone()], dh, n),
            0.0,
            &mut dkhat[rows.clone()],
        );
        gemm(
            MatRef::new(&dl, dh, dh).t(),
            MatRef::new(&cache.khat[rows.clone()], dh, n),
            0.0,
            &mut dqhat[rows],
        );
    }
    let dk = normalize_backward(&cache.khat, &cache.knorm, &dkhat, d, n);
    let dq = normalize_backward(&cache.qhat, &cache.qnorm, &dqhat, d, n);
    XcaGrads {
        dk: Tensor::from_vec(&[d, h, w], dk),
        dq: Tensor::from_vec(&[d, h, w], dq),
        dv: Tensor::from_vec(&[d, h, w], dv),
        dlog_temperature: Tensor::from_vec(&[heads], dlogt),
    }
}
