//! Central finite differences, used to validate analytic gradients.

use crate::tensor::Tensor;

/// Central-difference gradient of a scalar function at `x`.
pub fn numeric_gradient(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, step: f64) -> Tensor {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let fp = f(&probe);
        probe.data_mut()[i] = orig - step;
        let fm = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (fp - fm) / (2.0 * step);
    }
    grad
}

/// Central-difference derivative along selected coordinates only.
pub fn numeric_partials(
    mut f: impl FnMut(&Tensor) -> f64,
    x: &Tensor,
    indices: &[usize],
    step: f64,
) -> alloc::vec::Vec<f64> {
    let mut probe = x.clone();
    indices
        .iter()
        .map(|&i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + step;
            let fp = f(&probe);
            probe.data_mut()[i] = orig - step;
            let fm = f(&probe);
            probe.data_mut()[i] = orig;
            (fp - fm) / (2.0 * step)
        })
        .collect()
}

/// `‖a − b‖ / (‖a‖ + ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient length mismatch");
    let diff = libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum());
    let scale = libm::sqrt(a.iter().map(|x| x * x).sum()) + libm::sqrt(b.iter().map(|x| x * x).sum());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
