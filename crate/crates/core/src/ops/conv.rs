//! 2-D convolution on `[C, H, W]` maps with zero padding.
//!
//! Dense convolutions go through im2col + gemm; depth-wise convolutions
//! (`groups == channels`) use direct loops.

use alloc::vec;
use alloc::vec::Vec;

use super::gemm::{gemm, MatRef};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    /// `1` for dense, `channels` for depth-wise.
    pub groups: usize,
}

impl Conv2dSpec {
    /// Stride 1, "same" padding for an odd `kh x kw` kernel.
    pub fn same(kh: usize, kw: usize) -> Self {
        Self {
            stride: 1,
            pad_h: kh / 2,
            pad_w: kw / 2,
            groups: 1,
        }
    }

    pub fn strided(k: usize, stride: usize) -> Self {
        Self {
            stride,
            pad_h: k / 2,
            pad_w: k / 2,
            groups: 1,
        }
    }

    pub fn depthwise(k: usize, channels: usize) -> Self {
        Self {
            stride: 1,
            pad_h: k / 2,
            pad_w: k / 2,
            groups: channels,
        }
    }

    pub fn output_size(&self, h: usize, w: usize, kh: usize, kw: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad_h - kh) / self.stride + 1,
            (w + 2 * self.pad_w - kw) / self.stride + 1,
        )
    }

    fn is_pointwise(&self, kh: usize, kw: usize) -> bool {
        kh == 1 && kw == 1 && self.stride == 1 && self.pad_h == 0 && self.pad_w == 0
    }
}

struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

fn geometry(x: &Tensor, weight: &Tensor, spec: &Conv2dSpec) -> Geometry {
    let (cin, h, w) = x.dims3();
    let (cout, cpg, kh, kw) = match weight.shape()[..] {
        [a, b, c, d] => (a, b, c, d),
        _ => panic!("conv weight must be [cout, cin/groups, kh, kw]"),
    };
    if spec.groups == 1 {
        assert_eq!(cpg, cin, "conv input channels do not match weight");
    } else {
        assert!(
            spec.groups == cin && cout == cin && cpg == 1,
            "only dense or depth-wise convolutions are supported"
        );
    }
    assert!(h + 2 * spec.pad_h >= kh && w + 2 * spec.pad_w >= kw, "conv kernel larger than padded input");
    let (ho, wo) = spec.output_size(h, w, kh, kw);
    Geometry {
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        ho,
        wo,
    }
}

fn im2col(x: &[f64], g: &Geometry, spec: &Conv2dSpec) -> Vec<f64> {
    let p = g.ho * g.wo;
    let mut cols = vec![0.0; g.cin * g.kh * g.kw * p];
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad_w as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[oy * g.wo + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &Geometry, spec: &Conv2dSpec, dx: &mut [f64]) {
    let p = g.ho * g.wo;
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad_w as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward pass. When `keep_cols` is set the im2col buffer is returned for
/// reuse in the backward pass.
pub fn conv2d_forward(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    spec: &Conv2dSpec,
    keep_cols: bool,
) -> (Tensor, Option<Vec<f64>>) {
    let g = geometry(x, weight, spec);
    let p = g.ho * g.wo;
    let mut out = vec![0.0; g.cout * p];
    let mut cols_out = None;
    if spec.groups == 1 {
        let k = g.cin * g.kh * g.kw;
        if spec.is_pointwise(g.kh, g.kw) {
            gemm(
                MatRef::new(weight.data(), g.cout, k),
                MatRef::new(x.data(), k, p),
                0.0,
                &mut out,
            );
        } else {
            let cols = im2col(x.data(), &g, spec);
            gemm(MatRef::new(weight.data(), g.cout, k), MatRef::new(&cols, k, p), 0.0, &mut out);
            if keep_cols {
                cols_out = Some(cols);
            }
        }
    } else {
        depthwise_forward(x.data(), weight.data(), &g, spec, &mut out);
    }
    if let Some(b) = bias {
        assert_eq!(b.len(), g.cout, "conv bias length mismatch");
        for (co, &bv) in b.data().iter().enumerate() {
            for v in &mut out[co * p..(co + 1) * p] {
                *v += bv;
            }
        }
    }
    (Tensor::from_vec(&[g.cout, g.ho, g.wo], out), cols_out)
}

fn depthwise_forward(x: &[f64], w: &[f64], g: &Geometry, spec: &Conv2dSpec, out: &mut [f64]) {
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        let ker = &w[c * g.kh * g.kw..(c + 1) * g.kh * g.kw];
        let dst = &mut out[c * g.ho * g.wo..(c + 1) * g.ho * g.wo];
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let mut acc = 0.0;
                for ky in 0..g.kh {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad_w as isize;
                        if ix >= 0 && ix < g.w as isize {
                            acc += ker[ky * g.kw + kx] * plane[iy as usize * g.w + ix as usize];
                        }
                    }
                }
                dst[oy * g.wo + ox] = acc;
            }
        }
    }
}

pub struct Conv2dGrads {
    pub dx: Option<Tensor>,
    pub dweight: Option<Tensor>,
    pub dbias: Option<Tensor>,
}

/// Vector-Jacobian product of [`conv2d_forward`] for an output gradient `dy`.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    spec: &Conv2dSpec,
    cols: Option<&[f64]>,
    dy: &Tensor,
    need: (bool, bool, bool),
) -> Conv2dGrads {
    let g = geometry(x, weight, spec);
    let p = g.ho * g.wo;
    let dyd = dy.data();
    let dbias = need.2.then(|| {
        Tensor::from_fn(&[g.cout], |co| dyd[co * p..(co + 1) * p].iter().sum())
    });
    if spec.groups != 1 {
        let (dx, dw) = depthwise_backward(x.data(), weight.data(), &g, spec, dyd, need.0, need.1);
        return Conv2dGrads {
            dx: dx.map(|d| Tensor::from_vec(x.shape(), d)),
            dweight: dw.map(|d| Tensor::from_vec(weight.shape(), d)),
            dbias,
        };
    }
    let k = g.cin * g.kh * g.kw;
    let pointwise = spec.is_pointwise(g.kh, g.kw);
    let recomputed;
    let cols: &[f64] = if pointwise {
        x.data()
    } else if let Some(c) = cols {
        c
    } else {
        recomputed = im2col(x.data(), &g, spec);
        &recomputed
    };
    let dweight = need.1.then(|| {
        let mut dw = vec![0.0; g.cout * k];
        gemm(MatRef::new(dyd, g.cout, p), MatRef::new(cols, k, p).t(), 0.0, &mut dw);
        Tensor::from_vec(weight.shape(), dw)
    });
    let dx = need.0.then(|| {
        let mut dcols = vec![0.0; k * p];
        gemm(
            MatRef::new(weight.data(), g.cout, k).t(),
            MatRef::new(dyd, g.cout, p),
            0.0,
            &mut dcols,
        );
        if pointwise {
            Tensor::from_vec(x.shape(), dcols)
        } else {
            let mut dx = vec![0.0; g.cin * g.h * g.w];
            col2im(&dcols, &g, spec, &mut dx);
            Tensor::from_vec(x.shape(), dx)
        }
    });
    Conv2dGrads { dx, dweight, dbias }
}

fn depthwise_backward(
    x: &[f64],
    w: &[f64],
    g: &Geometry,
    spec: &Conv2dSpec,
    dy: &[f64],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let mut dx = need_dx.then(|| vec![0.0; x.len()]);
    let mut dw = need_dw.then(|| vec![0.0; w.len()]);
    for c in 0..g.cin {
        let base_in = c * g.h * g.w;
        let base_k = c * g.kh * g.kw;
        let grad = &dy[c * g.ho * g.wo..(c + 1) * g.ho * g.wo];
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let gv = grad[oy * g.wo + ox];
                if gv == 0.0 {
                    continue;
                }
                for ky in 0..g.kh {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad_w as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let xi = base_in + iy as usize * g.w + ix as usize;
                        let ki = base_k + ky * g.kw + kx;
                        if let Some(dx) = dx.as_mut() {
                            dx[xi] += gv * w[ki];
                        }
                        if let Some(dw) = dw.as_mut() {
                            dw[ki] += gv * x[xi];
                        }
                    }
                }
            }
        }
    }
    (dx, dw)
}
