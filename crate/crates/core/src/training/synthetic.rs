//! Deterministic textured image pairs with exact ground-truth flow.
//!
//! Frame 1 samples an analytic texture `T` on the pixel grid. Frame 2 is
//! `I2(y) = T(y - b(y))` for a smooth displacement `b` (small affine part
//! plus a low-frequency sinusoidal perturbation). The forward flow `f` then
//! solves `f(x) = b(x + f(x))`, which a fixed-point iteration finds to
//! machine precision because `b` is a contraction.

use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimator::FlowField;
use crate::features::{ImageTensor, COARSEST_STRIDE};
use crate::tensor::Tensor;

/// Forward-backward consistency threshold in pixels.
pub const CONSISTENCY_THRESHOLD: f64 = 1.0;

#[derive(Clone, Debug)]
pub struct SyntheticSample {
    pub image1: ImageTensor,
    pub image2: ImageTensor,
    pub flow: FlowField,
    /// `true` where the pixel stays in frame and passes the consistency test.
    pub valid: Vec<bool>,
}

#[derive(Clone, Debug)]
struct Wave {
    fy: f64,
    fx: f64,
    phase: f64,
    amp: [f64; 3],
}

#[derive(Clone, Debug)]
struct Blob {
    cy: f64,
    cx: f64,
    inv_two_sigma2: f64,
    amp: [f64; 3],
}

/// Smooth RGB texture with values in `(-1, 1)`.
#[derive(Clone, Debug)]
pub struct Texture {
    waves: Vec<Wave>,
    blobs: Vec<Blob>,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, size: f64) -> Self {
        let tau = 2.0 * core::f64::consts::PI;
        let waves = (0..6)
            .map(|_| {
                let cycles = rng.gen_range(1.0..4.0);
                let angle = rng.gen_range(0.0..tau);
                let f = tau * cycles / size;
                Wave {
                    fy: f * libm::sin(angle),
                    fx: f * libm::cos(angle),
                    phase: rng.gen_range(0.0..tau),
                    amp: [0; 3].map(|_| rng.gen_range(-0.5..0.5)),
                }
            })
            .collect();
        let blobs = (0..4)
            .map(|_| {
                let sigma = rng.gen_range(0.06..0.15) * size;
                Blob {
                    cy: rng.gen_range(-0.1..1.1) * size,
                    cx: rng.gen_range(-0.1..1.1) * size,
                    inv_two_sigma2: 1.0 / (2.0 * sigma * sigma),
                    amp: [0; 3].map(|_| rng.gen_range(-1.0..1.0)),
                }
            })
            .collect();
        Self { waves, blobs }
    }

    pub fn sample(&self, c: usize, y: f64, x: f64) -> f64 {
        let mut s = 0.0;
        for w in &self.waves {
            s += w.amp[c] * libm::sin(w.fy * y + w.fx * x + w.phase);
        }
        for b in &self.blobs {
            let r2 = (y - b.cy) * (y - b.cy) + (x - b.cx) * (x - b.cx);
            s += b.amp[c] * libm::exp(-r2 * b.inv_two_sigma2);
        }
        libm::tanh(s)
    }
}

/// Smooth displacement field `b(y, x) -> (u, v)`.
#[derive(Clone, Debug)]
pub struct Warp {
    center: f64,
    affine: [[f64; 2]; 2],
    shift: [f64; 2],
    waves: Vec<(f64, f64, f64, [f64; 2])>,
    gain: f64,
}

impl Warp {
    pub fn identity() -> Self {
        Self {
            center: 0.0,
            affine: [[0.0; 2]; 2],
            shift: [0.0; 2],
            waves: Vec::new(),
            gain: 0.0,
        }
    }

    fn random(rng: &mut ChaCha8Rng, size: f64) -> Self {
        let tau = 2.0 * core::f64::consts::PI;
        let mut w = Self {
            center: 0.5 * (size - 1.0),
            affine: [[0.0; 2]; 2].map(|r| r.map(|_| rng.gen_range(-0.06..0.06))),
            shift: [0.0; 2].map(|_| rng.gen_range(-1.0..1.0) * size / 16.0),
            waves: (0..2)
                .map(|_| {
                    let angle = rng.gen_range(0.0..tau);
                    let f = tau * rng.gen_range(0.3..1.0) / size;
                    (
                        f * libm::sin(angle),
                        f * libm::cos(angle),
                        rng.gen_range(0.0..tau),
                        [0.0; 2].map(|_| rng.gen_range(-1.0..1.0) * size / 40.0),
                    )
                })
                .collect(),
            gain: 1.0,
        };
        // Rescale so that |b| <= size/8 over the frame plus a margin; the
        // grid maximum can undershoot the true one, hence the slack.
        let limit = 0.9 * size / 8.0;
        let mut peak: f64 = 0.0;
        let steps = 33;
        for i in 0..steps {
            for j in 0..steps {
                let y = -0.25 * size + 1.5 * size * i as f64 / (steps - 1) as f64;
                let x = -0.25 * size + 1.5 * size * j as f64 / (steps - 1) as f64;
                let (u, v) = w.eval(y, x);
                peak = peak.max(libm::hypot(u, v));
            }
        }
        if peak > limit {
            w.gain = limit / peak;
        }
        w
    }

    /// `(u, v)` displacement at `(y, x)`.
    pub fn eval(&self, y: f64, x: f64) -> (f64, f64) {
        let (dy, dx) = (y - self.center, x - self.center);
        let mut u = self.shift[0] + self.affine[0][0] * dx + self.affine[0][1] * dy;
        let mut v = self.shift[1] + self.affine[1][0] * dx + self.affine[1][1] * dy;
        for &(fy, fx, ph, a) in &self.waves {
            let s = libm::sin(fy * y + fx * x + ph);
            u += a[0] * s;
            v += a[1] * s;
        }
        (self.gain * u, self.gain * v)
    }

    /// Forward flow at `(y, x)`: fixed point of `f = b(x + f)`.
    pub fn forward_flow(&self, y: f64, x: f64) -> (f64, f64) {
        let (mut u, mut v) = (0.0, 0.0);
        for _ in 0..100 {
            let (nu, nv) = self.eval(y + v, x + u);
            let done = (nu - u).abs() + (nv - v).abs() < 1e-13;
            (u, v) = (nu, nv);
            if done {
                break;
            }
        }
        (u, v)
    }
}

/// Renders one pair for a given texture and warp.
pub fn render_pair(texture: &Texture, warp: &Warp, size: usize) -> Result<SyntheticSample> {
    let n = size * size;
    let mut i1 = Tensor::zeros(&[3, size, size]);
    let mut i2 = Tensor::zeros(&[3, size, size]);
    let mut flow = Tensor::zeros(&[2, size, size]);
    let mut valid = alloc::vec![false; n];
    let last = (size - 1) as f64;
    for yi in 0..size {
        for xi in 0..size {
            let (y, x) = (yi as f64, xi as f64);
            let (bu, bv) = warp.eval(y, x);
            for c in 0..3 {
                i1.set3(c, yi, xi, texture.sample(c, y, x));
                i2.set3(c, yi, xi, texture.sample(c, y - bv, x - bu));
            }
            let (u, v) = warp.forward_flow(y, x);
            flow.set3(0, yi, xi, u);
            flow.set3(1, yi, xi, v);
            let (ty, tx) = (y + v, x + u);
            let inside = (0.0..=last).contains(&ty) && (0.0..=last).contains(&tx);
            // The backward flow at the target is -b; the round trip must close.
            let (ru, rv) = warp.eval(ty, tx);
            let consistent = libm::hypot(u - ru, v - rv) < CONSISTENCY_THRESHOLD;
            valid[yi * size + xi] = inside && consistent;
        }
    }
    Ok(SyntheticSample {
        image1: ImageTensor::new(i1)?,
        image2: ImageTensor::new(i2)?,
        flow: FlowField::new(flow, 1)?,
        valid,
    })
}

/// `n` samples of `size x size`; sample `i` depends only on `(seed, i)`.
pub fn generate_synthetic(n: usize, size: usize, seed: u64) -> Result<Vec<SyntheticSample>> {
    (0..n).map(|i| synthetic_sample(i, size, seed)).collect()
}

/// The `index`-th sample of the dataset identified by `seed`.
pub fn synthetic_sample(index: usize, size: usize, seed: u64) -> Result<SyntheticSample> {
    if size == 0 || size % COARSEST_STRIDE != 0 {
        return Err(Error::Config(alloc::format!(
            "synthetic image size must be a positive multiple of 16, got {size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let texture = Texture::random(&mut rng, size as f64);
    let warp = Warp::random(&mut rng, size as f64);
    render_pair(&texture, &warp, size)
}

/// Bilinear sample of channel `c` with border clamping.
pub fn sample_bilinear(img: &Tensor, c: usize, y: f64, x: f64) -> f64 {
    let (_, h, w) = img.dims3();
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (libm::floor(y) as usize, libm::floor(x) as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let top = (1.0 - fx) * img.at3(c, y0, x0) + fx * img.at3(c, y0, x1);
    let bot = (1.0 - fx) * img.at3(c, y1, x0) + fx * img.at3(c, y1, x1);
    (1.0 - fy) * top + fy * bot
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic(2, 32, 5).unwrap();
        let b = generate_synthetic(2, 32, 5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image1, y.image1);
            assert_eq!(x.image2, y.image2);
            assert_eq!(x.flow, y.flow);
            assert_eq!(x.valid, y.valid);
        }
        let c = generate_synthetic(1, 32, 6).unwrap();
        assert_ne!(a[0].image1, c[0].image1);
    }

    #[test]
    fn identity_warp_gives_zero_flow() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tex = Texture::random(&mut rng, 32.0);
        let s = render_pair(&tex, &Warp::identity(), 32).unwrap();
        assert_eq!(s.image1, s.image2);
        assert_eq!(s.flow.tensor().max_abs(), 0.0);
        assert!(s.valid.iter().all(|&v| v));
    }

    #[test]
    fn displacement_bounded_by_eighth_of_size() {
        for s in generate_synthetic(5, 64, 11).unwrap() {
            let f = s.flow.tensor();
            let n = 64 * 64;
            let m = (0..n).map(|p| libm::hypot(f.data()[p], f.data()[n + p])).fold(0.0, f64::max);
            assert!(m <= 8.0 + 1e-9, "max displacement {m}");
        }
    }

    #[test]
    fn rejects_sizes_not_divisible_by_16() {
        assert!(generate_synthetic(1, 40, 0).is_err());
    }
}
