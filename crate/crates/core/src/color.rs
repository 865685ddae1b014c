//! Middlebury color-wheel rendering of flow fields.

use alloc::vec::Vec;

use crate::tensor::Tensor;

const RY: usize = 15;
const YG: usize = 6;
const GC: usize = 4;
const CB: usize = 11;
const BM: usize = 13;
const MR: usize = 6;
const NCOLS: usize = RY + YG + GC + CB + BM + MR;

/// Interleaved 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

fn wheel() -> [[f64; 3]; NCOLS] {
    let mut w = [[0.0; 3]; NCOLS];
    let mut k = 0;
    let ramp = |i: usize, n: usize| libm::floor(255.0 * i as f64 / n as f64);
    for i in 0..RY {
        w[k] = [255.0, ramp(i, RY), 0.0];
        k += 1;
    }
    for i in 0..YG {
        w[k] = [255.0 - ramp(i, YG), 255.0, 0.0];
        k += 1;
    }
    for i in 0..GC {
        w[k] = [0.0, 255.0, ramp(i, GC)];
        k += 1;
    }
    for i in 0..CB {
        w[k] = [0.0, 255.0 - ramp(i, CB), 255.0];
        k += 1;
    }
    for i in 0..BM {
        w[k] = [ramp(i, BM), 0.0, 255.0];
        k += 1;
    }
    for i in 0..MR {
        w[k] = [255.0, 0.0, 255.0 - ramp(i, MR)];
        k += 1;
    }
    w
}

/// Color of a single vector; magnitudes beyond `max_rad` saturate.
pub fn vector_color(u: f64, v: f64, max_rad: f64) -> [u8; 3] {
    let wheel = wheel();
    let (u, v) = (u / max_rad, v / max_rad);
    let rad = libm::hypot(u, v).min(1.0);
    let a = libm::atan2(-v, -u) / core::f64::consts::PI;
    let fk = (a + 1.0) / 2.0 * (NCOLS - 1) as f64;
    let k0 = (libm::floor(fk) as usize).min(NCOLS - 1);
    let k1 = (k0 + 1) % NCOLS;
    let f = fk - k0 as f64;
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let col = ((1.0 - f) * wheel[k0][c] + f * wheel[k1][c]) / 255.0;
        let col = 1.0 - rad * (1.0 - col);
        *o = libm::floor(255.0 * col) as u8;
    }
    out
}

/// Renders a `[2, H, W]` flow. Zero flow is white; hue encodes direction and
/// saturation encodes magnitude relative to `max_rad`. A non-positive
/// `max_rad` uses the largest magnitude present.
pub fn flow_to_color(flow: &Tensor, max_rad: f64) -> RgbImage {
    let (_, h, w) = flow.dims3();
    let n = h * w;
    let d = flow.data();
    let max_rad = if max_rad > 0.0 {
        max_rad
    } else {
        let m = (0..n).map(|p| libm::hypot(d[p], d[n + p])).fold(0.0, f64::max);
        if m > 0.0 {
            m
        } else {
            1.0
        }
    };
    let mut data = Vec::with_capacity(3 * n);
    for p in 0..n {
        data.extend_from_slice(&vector_color(d[p], d[n + p], max_rad));
    }
    RgbImage {
        width: w,
        height: h,
        data,
    }
}
