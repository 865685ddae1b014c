//! On-demand local correlation lookup.
//!
//! For every pixel `x` and integer offset `δ ∈ [-r, r]²` the cost is
//! `<F1(x), F2(x + flow(x) + δ)> / sqrt(D)`, with `F2` sampled bilinearly
//! and zero outside the map. All offsets share the same fractional part,
//! so each pixel needs only the `(2r+2)²` integer-position dot products
//! around its displaced location; no all-pairs volume is ever built.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Tensor;

pub struct CorrCache {
    /// Integer-position dot products, `(2r+2)²` per pixel, unscaled.
    pub dots: Vec<f64>,
    /// Per pixel: floor of the displaced x and y.
    pub base: Vec<(isize, isize)>,
    /// Per pixel: fractional parts `(ax, ay)`.
    pub frac: Vec<(f64, f64)>,
}

/// Output channel of offset `(dy, dx)` for radius `r`.
pub fn offset_channel(radius: usize, dy: isize, dx: isize) -> usize {
    let side = 2 * radius + 1;
    (dy + radius as isize) as usize * side + (dx + radius as isize) as usize
}

fn pixel_major(t: &Tensor) -> Vec<f64> {
    let (c, h, w) = t.dims3();
    let n = h * w;
    let mut out = vec![0.0; c * n];
    for ch in 0..c {
        for p in 0..n {
            out[p * c + ch] = t.data()[ch * n + p];
        }
    }
    out
}

fn clamp_coord(v: f64) -> f64 {
    v.clamp(-1.0e6, 1.0e6)
}

pub fn corr_forward(f1: &Tensor, f2: &Tensor, flow: &Tensor, radius: usize) -> (Tensor, CorrCache) {
    let (dim, h, w) = f1.dims3();
    assert_eq!(f1.shape(), f2.shape(), "correlation feature shapes differ");
    assert_eq!(flow.shape(), &[2, h, w], "flow does not match feature resolution");
    let n = h * w;
    let win = 2 * radius + 2;
    let side = 2 * radius + 1;
    let scale = 1.0 / libm::sqrt(dim as f64);
    let a = pixel_major(f1);
    let b = pixel_major(f2);
    let fd = flow.data();
    let mut dots = vec![0.0; n * win * win];
    let mut base = Vec::with_capacity(n);
    let mut frac = Vec::with_capacity(n);
    let mut out = vec![0.0; side * side * n];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let px = clamp_coord(x as f64 + fd[p]);
            let py = clamp_coord(y as f64 + fd[n + p]);
            let (fx0, fy0) = (libm::floor(px), libm::floor(py));
            let (x0, y0) = (fx0 as isize, fy0 as isize);
            let (ax, ay) = (px - fx0, py - fy0);
            base.push((x0, y0));
            frac.push((ax, ay));
            let fp = &a[p * dim..(p + 1) * dim];
            let dp = &mut dots[p * win * win..(p + 1) * win * win];
            for wy in 0..win {
                let qy = y0 - radius as isize + wy as isize;
                if qy < 0 || qy >= h as isize {
                    continue;
                }
                for wx in 0..win {
                    let qx = x0 - radius as isize + wx as isize;
                    if qx < 0 || qx >= w as isize {
                        continue;
                    }
                    let q = qy as usize * w + qx as usize;
                    let fq = &b[q * dim..(q + 1) * dim];
                    dp[wy * win + wx] = fp.iter().zip(fq).map(|(u, v)| u * v).sum();
                }
            }
            let (w00, w01, w10, w11) = ((1.0 - ax) * (1.0 - ay), ax * (1.0 - ay), (1.0 - ax) * ay, ax * ay);
            for oy in 0..side {
                for ox in 0..side {
                    let i = oy * win + ox;
                    let v = w00 * dp[i] + w01 * dp[i + 1] + w10 * dp[i + win] + w11 * dp[i + win + 1];
                    out[(oy * side + ox) * n + p] = v * scale;
                }
            }
        }
    }
    (
        Tensor::from_vec(&[side * side, h, w], out),
        CorrCache { dots, base, frac },
    )
}

pub struct CorrGrads {
    pub df1: Option<Tensor>,
    pub df2: Option<Tensor>,
    pub dflow: Option<Tensor>,
}

pub fn corr_backward(
    f1: &Tensor,
    f2: &Tensor,
    radius: usize,
    cache: &CorrCache,
    dcost: &Tensor,
    need: (bool, bool, bool),
) -> CorrGrads {
    let (dim, h, w) = f1.dims3();
    let n = h * w;
    let win = 2 * radius + 2;
    let side = 2 * radius + 1;
    let scale = 1.0 / libm::sqrt(dim as f64);
    let a = pixel_major(f1);
    let b = pixel_major(f2);
    let g = dcost.data();
    let mut da = need.0.then(|| vec![0.0; n * dim]);
    let mut db = need.1.then(|| vec![0.0; n * dim]);
    let mut dflow = need.2.then(|| vec![0.0; 2 * n]);
    let mut coef = vec![0.0; win * win];
    for p in 0..n {
        let (x0, y0) = cache.base[p];
        let (ax, ay) = cache.frac[p];
        let dp = &cache.dots[p * win * win..(p + 1) * win * win];
        coef.iter_mut().for_each(|c| *c = 0.0);
        let (mut du, mut dv) = (0.0, 0.0);
        for oy in 0..side {
            for ox in 0..side {
                let gk = g[(oy * side + ox) * n + p] * scale;
                if gk == 0.0 {
                    continue;
                }
                let i = oy * win + ox;
                coef[i] += gk * (1.0 - ax) * (1.0 - ay);
                coef[i + 1] += gk * ax * (1.0 - ay);
                coef[i + win] += gk * (1.0 - ax) * ay;
                coef[i + win + 1] += gk * ax * ay;
                du += gk * ((1.0 - ay) * (dp[i + 1] - dp[i]) + ay * (dp[i + win + 1] - dp[i + win]));
                dv += gk * ((1.0 - ax) * (dp[i + win] - dp[i]) + ax * (dp[i + win + 1] - dp[i + 1]));
            }
        }
        if let Some(df) = dflow.as_mut() {
            df[p] = du;
            df[n + p] = dv;
        }
        if da.is_none() && db.is_none() {
            continue;
        }
        for wy in 0..win {
            let qy = y0 - radius as isize + wy as isize;
            if qy < 0 || qy >= h as isize {
                continue;
            }
            for wx in 0..win {
                let qx = x0 - radius as isize + wx as isize;
                if qx < 0 || qx >= w as isize {
                    continue;
                }
                let c = coef[wy * win + wx];
                if c == 0.0 {
                    continue;
                }
                let q = qy as usize * w + qx as usize;
                if let Some(da) = da.as_mut() {
                    for (d, v) in da[p * dim..(p + 1) * dim].iter_mut().zip(&b[q * dim..(q + 1) * dim]) {
                        *d += c * v;
                    }
                }
                if let Some(db) = db.as_mut() {
                    for (d, v) in db[q * dim..(q + 1) * dim].iter_mut().zip(&a[p * dim..(p + 1) * dim]) {
                        *d += c * v;
                    }
                }
            }
        }
    }
    let channel_major = |pm: Vec<f64>| {
        let mut out = vec![0.0; dim * n];
        for p in 0..n {
            for ch in 0..dim {
                out[ch * n + p] = pm[p * dim + ch];
            }
        }
        Tensor::from_vec(&[dim, h, w], out)
    };
    CorrGrads {
        df1: da.map(channel_major),
        df2: db.map(channel_major),
        dflow: dflow.map(|d| Tensor::from_vec(&[2, h, w], d)),
    }
}
