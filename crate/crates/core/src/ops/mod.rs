//! Numeric kernels with explicit forward and vector-Jacobian functions.
//!
//! The autodiff tape dispatches into these; they are also usable directly on
//! plain tensors (the attention benchmark does so).

pub mod conv;
pub mod corr;
pub mod gemm;
pub mod norm;
pub mod resample;
pub mod upsample;
pub mod xca;

const SQRT_2: f64 = core::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2)) + x * INV_SQRT_2PI * libm::exp(-0.5 * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}
