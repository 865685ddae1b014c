mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use xcaflow_core::metrics::*;
use xcaflow_core::Tensor;

/// Fl in percent, computed pixel by pixel.
fn fl_oracle(flow: &Tensor, gt: &Tensor, mask: &[bool]) -> f64 {
    let n = mask.len();
    let (f, g) = (flow.data(), gt.data());
    let (mut out, mut cnt) = (0usize, 0usize);
    for p in 0..n {
        if !mask[p] {
            continue;
        }
        let epe = ((f[p] - g[p]).powi(2) + (f[n + p] - g[n + p]).powi(2)).sqrt();
        let mag = (g[p].powi(2) + g[n + p].powi(2)).sqrt();
        cnt += 1;
        out += usize::from(epe > 3.0 && epe > 0.05 * mag);
    }
    100.0 * out as f64 / cnt as f64
}

#[test]
fn trivial_metric_values() {
    let gt = Tensor::from_fn(&[2, 4, 4], |i| i as f64);
    assert_eq!(aepe(&gt, &gt, None).unwrap(), 0.0);
    assert_eq!(fl_error(&gt, &gt, None).unwrap(), 0.0);
    let shifted = Tensor::from_fn(&[2, 4, 4], |i| gt.data()[i] + if i < 16 { 3.0 } else { 4.0 });
    assert!((aepe(&shifted, &gt, None).unwrap() - 5.0).abs() < 1e-12);
    // Every gt magnitude is below 100, so 5 px is also above 5% of it.
    assert_eq!(fl_error(&shifted, &gt, None).unwrap(), 100.0);
    let big = Tensor::from_fn(&[2, 1, 1], |i| if i == 0 { 200.0 } else { 0.0 });
    let off = Tensor::from_fn(&[2, 1, 1], |i| if i == 0 { 205.0 } else { 0.0 });
    assert_eq!(fl_error(&off, &big, None).unwrap(), 0.0);
    let r = evaluate(&shifted, &gt, None, None).unwrap();
    assert_eq!(r.aepe_unmatched, None);
    assert_eq!(r.n_unmatched, None);
    assert_eq!(r.n_all, 16);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn matched_unmatched_decomposition(seed in any::<u64>(), h in 1usize..9, w in 1usize..9) {
        let mut r = rng(seed);
        let n = h * w;
        let gt = random_tensor(&mut r, &[2, h, w], 20.0);
        let flow = Tensor::from_fn(&[2, h, w], |i| gt.data()[i] + r.gen_range(-6.0..6.0));
        let valid: Vec<bool> = (0..n).map(|_| r.gen_bool(0.8)).collect();
        let occ: Vec<bool> = (0..n).map(|_| r.gen_bool(0.3)).collect();
        let res = evaluate(&flow, &gt, Some(&valid), Some(&occ)).unwrap();
        prop_assert_eq!(res.n_matched + res.n_unmatched.unwrap(), res.n_all);
        if res.n_all > 0 {
            let nm = res.n_matched as f64;
            let nu = res.n_unmatched.unwrap() as f64;
            let combined = (nm * res.aepe_matched + nu * res.aepe_unmatched.unwrap()) / res.n_all as f64;
            prop_assert!((combined - res.aepe_all).abs() <= 1e-9);
            prop_assert!((res.fl_all - fl_oracle(&flow, &gt, &valid)).abs() <= 1e-12);
            if res.n_matched > 0 {
                let noc: Vec<bool> = valid.iter().zip(&occ).map(|(&v, &o)| v && !o).collect();
                prop_assert!((res.fl_noc - fl_oracle(&flow, &gt, &noc)).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn size_mismatches_are_errors() {
    let a = Tensor::zeros(&[2, 3, 3]);
    let b = Tensor::zeros(&[2, 3, 4]);
    assert!(aepe(&a, &b, None).is_err());
    assert!(aepe(&a, &a, Some(&[true; 4])).is_err());
    assert!(evaluate(&a, &a, None, Some(&[false; 8])).is_err());
}
