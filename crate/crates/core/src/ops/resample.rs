//! Bilinear resizing (corner-aligned) and nearest-neighbour ×2 repetition.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Tensor;

/// Source index pair and interpolation weight for one output coordinate.
fn axis_taps(out: usize, inp: usize) -> Vec<(usize, usize, f64)> {
    (0..out)
        .map(|o| {
            if out == 1 || inp == 1 {
                return (0, 0, 0.0);
            }
            let src = o as f64 * (inp - 1) as f64 / (out - 1) as f64;
            let i0 = (libm::floor(src) as usize).min(inp - 1);
            let i1 = (i0 + 1).min(inp - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Resizes a `[C, H, W]` map to `out_h x out_w` with corner-aligned sampling.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let (c, h, w) = x.dims3();
    let ty = axis_taps(out_h, h);
    let tx = axis_taps(out_w, w);
    let xd = x.data();
    let mut out = vec![0.0; c * out_h * out_w];
    for ch in 0..c {
        let plane = &xd[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out[(ch * out_h + oy) * out_w + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Tensor::from_vec(&[c, out_h, out_w], out)
}

pub fn resize_bilinear_backward(in_shape: &[usize], dy: &Tensor) -> Tensor {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (_, out_h, out_w) = dy.dims3();
    let ty = axis_taps(out_h, h);
    let tx = axis_taps(out_w, w);
    let g = dy.data();
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let gv = g[(ch * out_h + oy) * out_w + ox];
                plane[y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                plane[y0 * w + x1] += gv * (1.0 - fy) * fx;
                plane[y1 * w + x0] += gv * fy * (1.0 - fx);
                plane[y1 * w + x1] += gv * fy * fx;
            }
        }
    }
    Tensor::from_vec(in_shape, dx)
}

/// Each pixel of a `[C, H, W]` map becomes a 2×2 block.
pub fn repeat_nearest2(x: &Tensor) -> Tensor {
    let (c, h, w) = x.dims3();
    let mut out = Tensor::zeros(&[c, 2 * h, 2 * w]);
    for ch in 0..c {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                out.set3(ch, y, xx, x.at3(ch, y / 2, xx / 2));
            }
        }
    }
    out
}

pub fn repeat_nearest2_backward(dy: &Tensor) -> Tensor {
    let (c, h2, w2) = dy.dims3();
    let mut dx = Tensor::zeros(&[c, h2 / 2, w2 / 2]);
    for ch in 0..c {
        for y in 0..h2 {
            for x in 0..w2 {
                let v = dx.at3(ch, y / 2, x / 2) + dy.at3(ch, y, x);
                dx.set3(ch, y / 2, x / 2, v);
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corners_are_preserved() {
        let x = Tensor::from_fn(&[1, 3, 4], |i| (i * i) as f64);
        let y = resize_bilinear(&x, 6, 8);
        assert_eq!(y.at3(0, 0, 0), x.at3(0, 0, 0));
        assert_eq!(y.at3(0, 5, 7), x.at3(0, 2, 3));
        assert_eq!(y.at3(0, 0, 7), x.at3(0, 0, 3));
    }

    #[test]
    fn linear_ramp_stays_linear() {
        let x = Tensor::from_fn(&[1, 1, 5], |i| 2.0 * i as f64);
        let y = resize_bilinear(&x, 1, 9);
        for i in 0..9 {
            assert!((y.at3(0, 0, i) - i as f64).abs() < 1e-12);
        }
    }
}
