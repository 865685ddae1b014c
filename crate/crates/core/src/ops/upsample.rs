//! Learned ×2 convex upsampling of flow fields.
//!
//! Each fine pixel `(2y+i, 2x+j)` is a softmax-weighted combination of the
//! 3×3 coarse neighbourhood of `(y, x)`, scaled by 2 because displacements are
//! measured in pixels of their own resolution. Mask channel `k * 4 + (2i + j)`
//! holds the logit of neighbour `k` (row-major over the 3×3 window) for
//! sub-pixel `(i, j)`. Neighbours outside the map replicate the border.

use alloc::vec;

use crate::tensor::Tensor;

pub const MASK_CHANNELS: usize = 9 * 4;

fn neighbour(y: usize, x: usize, k: usize, h: usize, w: usize) -> usize {
    let ny = (y as isize + (k / 3) as isize - 1).clamp(0, h as isize - 1) as usize;
    let nx = (x as isize + (k % 3) as isize - 1).clamp(0, w as isize - 1) as usize;
    ny * w + nx
}

fn softmax9(logits: &mut [f64; 9]) {
    let mx = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut s = 0.0;
    for v in logits.iter_mut() {
        *v = libm::exp(*v - mx);
        s += *v;
    }
    for v in logits.iter_mut() {
        *v /= s;
    }
}

/// Softmax weights of the 9 neighbours for coarse pixel `p`, sub-pixel `sub`.
fn weights(mask: &[f64], n: usize, p: usize, sub: usize) -> [f64; 9] {
    let mut wts = [0.0; 9];
    for (k, wk) in wts.iter_mut().enumerate() {
        *wk = mask[(k * 4 + sub) * n + p];
    }
    softmax9(&mut wts);
    wts
}

pub fn convex_upsample_forward(flow: &Tensor, mask: &Tensor) -> Tensor {
    let (c, h, w) = flow.dims3();
    assert_eq!(mask.shape(), &[MASK_CHANNELS, h, w], "convex mask shape mismatch");
    let n = h * w;
    let (fd, md) = (flow.data(), mask.data());
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * h2 * w2];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            for sub in 0..4 {
                let wts = weights(md, n, p, sub);
                let (oy, ox) = (2 * y + sub / 2, 2 * x + sub % 2);
                for ch in 0..c {
                    // Offsets from the centre, so a constant field maps to exactly 2c.
                    let centre = fd[ch * n + p];
                    let mut acc = 0.0;
                    for (k, wk) in wts.iter().enumerate() {
                        acc += wk * (fd[ch * n + neighbour(y, x, k, h, w)] - centre);
                    }
                    out[(ch * h2 + oy) * w2 + ox] = 2.0 * (centre + acc);
                }
            }
        }
    }
    Tensor::from_vec(&[c, h2, w2], out)
}

/// Returns `(dflow, dmask)`.
pub fn convex_upsample_backward(flow: &Tensor, mask: &Tensor, dy: &Tensor) -> (Tensor, Tensor) {
    let (c, h, w) = flow.dims3();
    let n = h * w;
    let (fd, md, g) = (flow.data(), mask.data(), dy.data());
    let (h2, w2) = (2 * h, 2 * w);
    let mut dflow = vec![0.0; c * n];
    let mut dmask = vec![0.0; MASK_CHANNELS * n];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            for sub in 0..4 {
                let wts = weights(md, n, p, sub);
                let (oy, ox) = (2 * y + sub / 2, 2 * x + sub % 2);
                let mut dw = [0.0; 9];
                for ch in 0..c {
                    let go = 2.0 * g[(ch * h2 + oy) * w2 + ox];
                    for k in 0..9 {
                        let q = neighbour(y, x, k, h, w);
                        dflow[ch * n + q] += go * wts[k];
                        dw[k] += go * fd[ch * n + q];
                    }
                }
                let s: f64 = (0..9).map(|k| wts[k] * dw[k]).sum();
                for k in 0..9 {
                    dmask[(k * 4 + sub) * n + p] = wts[k] * (dw[k] - s);
                }
            }
        }
    }
    (
        Tensor::from_vec(&[c, h, w], dflow),
        Tensor::from_vec(&[MASK_CHANNELS, h, w], dmask),
    )
}
