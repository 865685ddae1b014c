//! Per-token layer normalization over the channel axis of a `[C, H, W]` map.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub struct LayerNormCache {
    /// Normalized input, same layout as `x`.
    pub xhat: Vec<f64>,
    /// Reciprocal standard deviation per pixel.
    pub rstd: Vec<f64>,
}

pub fn layer_norm_forward(x: &Tensor, gain: &Tensor, bias: &Tensor) -> (Tensor, LayerNormCache) {
    let (c, h, w) = x.dims3();
    let n = h * w;
    assert!(gain.len() == c && bias.len() == c, "layer norm parameter size mismatch");
    let xd = x.data();
    let mut mean = vec![0.0; n];
    for ch in 0..c {
        for (m, v) in mean.iter_mut().zip(&xd[ch * n..(ch + 1) * n]) {
            *m += v;
        }
    }
    let inv_c = 1.0 / c as f64;
    mean.iter_mut().for_each(|m| *m *= inv_c);
    let mut var = vec![0.0; n];
    for ch in 0..c {
        for ((s, v), m) in var.iter_mut().zip(&xd[ch * n..(ch + 1) * n]).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    let rstd: Vec<f64> = var
        .iter()
        .map(|s| 1.0 / libm::sqrt(s * inv_c + LAYER_NORM_EPS))
        .collect();
    let mut xhat = vec![0.0; c * n];
    let mut y = vec![0.0; c * n];
    for ch in 0..c {
        let (gv, bv) = (gain.data()[ch], bias.data()[ch]);
        for p in 0..n {
            let i = ch * n + p;
            let z = (xd[i] - mean[p]) * rstd[p];
            xhat[i] = z;
            y[i] = z * gv + bv;
        }
    }
    (Tensor::from_vec(&[c, h, w], y), LayerNormCache { xhat, rstd })
}

/// Returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &Tensor,
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (c, h, w) = dy.dims3();
    let n = h * w;
    let dyd = dy.data();
    let mut dgain = vec![0.0; c];
    let mut dbias = vec![0.0; c];
    let mut sum_dxhat = vec![0.0; n];
    let mut sum_dxhat_xhat = vec![0.0; n];
    let mut dxhat = vec![0.0; c * n];
    for ch in 0..c {
        let gv = gain.data()[ch];
        for p in 0..n {
            let i = ch * n + p;
            dgain[ch] += dyd[i] * cache.xhat[i];
            dbias[ch] += dyd[i];
            let d = dyd[i] * gv;
            dxhat[i] = d;
            sum_dxhat[p] += d;
            sum_dxhat_xhat[p] += d * cache.xhat[i];
        }
    }
    let inv_c = 1.0 / c as f64;
    let mut dx = vec![0.0; c * n];
    for ch in 0..c {
        for p in 0..n {
            let i = ch * n + p;
            dx[i] = cache.rstd[p]
                * (dxhat[i] - inv_c * sum_dxhat[p] - cache.xhat[i] * inv_c * sum_dxhat_xhat[p]);
        }
    }
    (
        Tensor::from_vec(&[c, h, w], dx),
        Tensor::from_vec(&[c], dgain),
        Tensor::from_vec(&[c], dbias),
    )
}
