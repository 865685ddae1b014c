//! Dense row-major `f64` tensors.
//!
//! Spatial maps are stored channel-major as `[channels, height, width]`, so a
//! map with `N = height * width` pixels doubles as a `channels x N` token
//! matrix without any copy.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Panics if `data.len()` does not match the product of `shape`.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(n, data.len(), "tensor data length does not match shape {shape:?}");
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_vec(&[1], vec![value])
    }

    /// Zero-sized placeholder used when a tape slot is released.
    pub(crate) fn empty() -> Self {
        Self {
            shape: vec![0],
            data: Vec::new(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(n, self.data.len(), "reshape to {shape:?} changes element count");
        self.shape = shape.to_vec();
        self
    }

    /// `(channels, height, width)` of a 3-D map. Panics on other ranks.
    pub fn dims3(&self) -> (usize, usize, usize) {
        match self.shape[..] {
            [c, h, w] => (c, h, w),
            _ => panic!("expected a [C, H, W] tensor, got {:?}", self.shape),
        }
    }

    pub fn channels(&self) -> usize {
        self.dims3().0
    }

    pub fn spatial(&self) -> (usize, usize) {
        let (_, h, w) = self.dims3();
        (h, w)
    }

    /// Contiguous slice of channel `c` of a `[C, H, W]` map.
    pub fn channel(&self, c: usize) -> &[f64] {
        let (_, h, w) = self.dims3();
        &self.data[c * h * w..(c + 1) * h * w]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let (_, h, w) = self.dims3();
        &mut self.data[c * h * w..(c + 1) * h * w]
    }

    pub fn at3(&self, c: usize, y: usize, x: usize) -> f64 {
        let (_, h, w) = self.dims3();
        self.data[(c * h + y) * w + x]
    }

    pub fn set3(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let (_, h, w) = self.dims3();
        self.data[(c * h + y) * w + x] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.shape, other.shape, "shape mismatch in elementwise op");
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "shape mismatch in add_assign");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        assert_eq!(self.shape, other.shape, "shape mismatch in axpy");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch in dot");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch in max_abs_diff");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Channels `[start, start + len)` of a `[C, H, W]` map.
    pub fn slice_channels(&self, start: usize, len: usize) -> Self {
        let (c, h, w) = self.dims3();
        assert!(start + len <= c, "channel slice out of range");
        Self::from_vec(&[len, h, w], self.data[start * h * w..(start + len) * h * w].to_vec())
    }

    /// Stacks `[C_i, H, W]` maps along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Self {
        let (_, h, w) = parts[0].dims3();
        let mut c = 0;
        let mut data = Vec::new();
        for p in parts {
            let (pc, ph, pw) = p.dims3();
            assert_eq!((ph, pw), (h, w), "spatial mismatch in channel concat");
            c += pc;
            data.extend_from_slice(&p.data);
        }
        Self::from_vec(&[c, h, w], data)
    }

    /// Replicate-pads the bottom and right edges of a `[C, H, W]` map.
    pub fn pad_replicate(&self, pad_bottom: usize, pad_right: usize) -> Self {
        let (c, h, w) = self.dims3();
        let (nh, nw) = (h + pad_bottom, w + pad_right);
        let mut out = Self::zeros(&[c, nh, nw]);
        for ch in 0..c {
            for y in 0..nh {
                let sy = y.min(h - 1);
                for x in 0..nw {
                    out.data[(ch * nh + y) * nw + x] = self.data[(ch * h + sy) * w + x.min(w - 1)];
                }
            }
        }
        out
    }

    /// Top-left `height x width` window of a `[C, H, W]` map.
    pub fn crop(&self, height: usize, width: usize) -> Self {
        let (c, h, w) = self.dims3();
        assert!(height <= h && width <= w, "crop larger than tensor");
        let mut out = Self::zeros(&[c, height, width]);
        for ch in 0..c {
            for y in 0..height {
                let src = (ch * h + y) * w;
                let dst = (ch * height + y) * width;
                out.data[dst..dst + width].copy_from_slice(&self.data[src..src + width]);
            }
        }
        out
    }
}
