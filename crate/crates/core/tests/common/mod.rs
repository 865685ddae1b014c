//! Independent oracles and a finite-difference harness shared by test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xcaflow_core::autodiff::gradcheck::relative_error;
use xcaflow_core::estimator::{corr_lookup, CorrelationSampler};
use xcaflow_core::ops::corr::offset_channel;
use xcaflow_core::{
    EstimateOptions, FlowModel, ImageTensor, IterationSchedule, ParamId, ParamStore, Tape, Tensor, Var,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| scale * rng.gen_range(-1.0..1.0))
}

/// Cross-covariance attention as plain loops over `[d][n]` arrays, one head at a time:
/// column-softmax of normalized key/query inner products, then `V·A`.
pub fn xca_scalar(k: &[Vec<f64>], q: &[Vec<f64>], v: &[Vec<f64>], tau: &[f64], heads: usize) -> Vec<Vec<f64>> {
    let d = k.len();
    let n = k[0].len();
    let dh = d / heads;
    let norm = |row: &Vec<f64>| {
        let mut s = 0.0;
        for x in row {
            s += x * x;
        }
        s.sqrt().max(1e-6)
    };
    let mut out = vec![vec![0.0; n]; d];
    for h in 0..heads {
        let base = h * dh;
        let mut logits = vec![vec![0.0; dh]; dh];
        for i in 0..dh {
            for j in 0..dh {
                let ki = &k[base + i];
                let qj = &q[base + j];
                let mut dot = 0.0;
                for t in 0..n {
                    dot += ki[t] * qj[t];
                }
                logits[i][j] = dot / (norm(ki) * norm(qj)) / tau[h];
            }
        }
        for j in 0..dh {
            let mx = (0..dh).map(|i| logits[i][j]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..dh).map(|i| (logits[i][j] - mx).exp()).sum();
            for t in 0..n {
                let mut acc = 0.0;
                for i in 0..dh {
                    acc += (logits[i][j] - mx).exp() / z * v[base + i][t];
                }
                out[base + j][t] = acc;
            }
        }
    }
    out
}

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let c = t.shape()[0];
    (0..c).map(|i| t.channel(i).to_vec()).collect()
}

/// Full 4-D volume `vol[y][x][y2][x2] = <f1(y,x), f2(y2,x2)> / sqrt(D)`.
pub fn all_pairs_volume(f1: &Tensor, f2: &Tensor) -> Vec<f64> {
    let (d, h, w) = f1.dims3();
    let n = h * w;
    let mut vol = vec![0.0; n * n];
    for p in 0..n {
        for p2 in 0..n {
            let mut s = 0.0;
            for c in 0..d {
                s += f1.data()[c * n + p] * f2.data()[c * n + p2];
            }
            vol[p * n + p2] = s / (d as f64).sqrt();
        }
    }
    vol
}

/// Bilinear read of the volume slice of pixel `p` at `(y, x)`, zero outside.
pub fn sample_volume(vol: &[f64], h: usize, w: usize, p: usize, y: f64, x: f64) -> f64 {
    let n = h * w;
    let (y0, x0) = (y.floor(), x.floor());
    let mut acc = 0.0;
    for (dy, wy) in [(0.0, 1.0 - (y - y0)), (1.0, y - y0)] {
        for (dx, wx) in [(0.0, 1.0 - (x - x0)), (1.0, x - x0)] {
            let (yy, xx) = (y0 + dy, x0 + dx);
            if yy >= 0.0 && xx >= 0.0 && yy < h as f64 && xx < w as f64 {
                acc += wy * wx * vol[p * n + yy as usize * w + xx as usize];
            }
        }
    }
    acc
}

/// Relative errors between tape gradients and central differences of
/// `sum(out ⊙ proj)`, for every input and every selected parameter.
pub struct GradCheck<'a> {
    pub store: &'a ParamStore,
    pub inputs: Vec<Tensor>,
    pub params: Vec<ParamId>,
    pub step: f64,
}

impl GradCheck<'_> {
    pub fn run<F>(&self, seed: u64, build: F) -> Vec<(String, f64)>
    where
        F: Fn(&mut Tape<'_>, &[Var]) -> Var,
    {
        let eval = |store: &ParamStore, inputs: &[Tensor], proj: Option<&Tensor>| -> (f64, Tensor) {
            let mut tape = Tape::no_grad(store);
            let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
            let out = build(&mut tape, &vars);
            let v = tape.value(out).clone();
            let s = proj.map_or(0.0, |p| v.dot(p));
            (s, v)
        };
        let (_, out0) = eval(self.store, &self.inputs, None);
        let proj = random_tensor(&mut rng(seed), out0.shape(), 1.0);

        let mut tape = Tape::new(self.store);
        let vars: Vec<Var> = self.inputs.iter().map(|t| tape.input(t.clone())).collect();
        let out = build(&mut tape, &vars);
        let loss = tape.dot(out, proj.clone());
        let grads = tape.backward(loss);

        let mut report = Vec::new();
        for (i, x) in self.inputs.iter().enumerate() {
            let analytic = grads.wrt(vars[i]).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
            let mut numeric = Tensor::zeros(x.shape());
            let mut probe = self.inputs.clone();
            for j in 0..x.len() {
                let orig = x.data()[j];
                probe[i].data_mut()[j] = orig + self.step;
                let fp = eval(self.store, &probe, Some(&proj)).0;
                probe[i].data_mut()[j] = orig - self.step;
                let fm = eval(self.store, &probe, Some(&proj)).0;
                probe[i].data_mut()[j] = orig;
                numeric.data_mut()[j] = (fp - fm) / (2.0 * self.step);
            }
            report.push((format!("input{i}"), relative_error(analytic.data(), numeric.data())));
        }
        for &id in &self.params {
            let value = self.store.get(id).clone();
            let analytic = grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(value.shape()));
            let mut numeric = Tensor::zeros(value.shape());
            let mut store = self.store.clone();
            for j in 0..value.len() {
                store.get_mut(id).data_mut()[j] = value.data()[j] + self.step;
                let fp = eval(&store, &self.inputs, Some(&proj)).0;
                store.get_mut(id).data_mut()[j] = value.data()[j] - self.step;
                let fm = eval(&store, &self.inputs, Some(&proj)).0;
                store.get_mut(id).data_mut()[j] = value.data()[j];
                numeric.data_mut()[j] = (fp - fm) / (2.0 * self.step);
            }
            report.push((self.store.name(id).to_string(), relative_error(analytic.data(), numeric.data())));
        }
        report
    }
}

/// Largest relative error of a report, with its label.
pub fn worst(report: &[(String, f64)]) -> (String, f64) {
    report
        .iter()
        .cloned()
        .fold((String::new(), 0.0), |a, b| if b.1 > a.1 { b } else { a })
}

/// Cost lookup on a standalone tape.
pub fn lookup(f1: &Tensor, f2: &Tensor, flow: &Tensor, radius: usize) -> Tensor {
    let mut tape = Tape::standalone();
    let s = CorrelationSampler {
        f1: tape.input(f1.clone()),
        f2: tape.input(f2.clone()),
        radius,
    };
    let fl = tape.input(flow.clone());
    let c = corr_lookup(&mut tape, &s, fl).unwrap();
    tape.value(c).clone()
}

/// On-demand lookup against bilinear reads of the full 4-D volume.
pub fn corr_oracle_max_diff(seed: u64, h: usize, w: usize, d: usize, radius: usize) -> f64 {
    let mut r = rng(seed);
    let f1 = random_tensor(&mut r, &[d, h, w], 1.0);
    let f2 = random_tensor(&mut r, &[d, h, w], 1.0);
    let flow = Tensor::from_fn(&[2, h, w], |_| r.gen_range(-4.0..4.0));
    let got = lookup(&f1, &f2, &flow, radius);
    let vol = all_pairs_volume(&f1, &f2);
    let n = h * w;
    let ri = radius as isize;
    let mut worst: f64 = 0.0;
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            for dy in -ri..=ri {
                for dx in -ri..=ri {
                    let sy = y as f64 + flow.data()[n + p] + dy as f64;
                    let sx = x as f64 + flow.data()[p] + dx as f64;
                    let e = sample_volume(&vol, h, w, p, sy, sx);
                    let c = offset_channel(radius, dy, dx);
                    worst = worst.max((got.data()[c * n + p] - e).abs());
                }
            }
        }
    }
    worst
}

/// Smooth random features normalized per pixel: by Cauchy-Schwarz the
/// self-correlation then peaks at zero offset.
pub fn smooth_unit_features(seed: u64, d: usize, side: usize) -> Tensor {
    let mut r = rng(seed);
    let params: Vec<(f64, f64, f64)> = (0..d * 3)
        .map(|_| (r.gen_range(0.1..0.5), r.gen_range(0.1..0.5), r.gen_range(0.0..6.3)))
        .collect();
    let n = side * side;
    let mut t = Tensor::from_fn(&[d, side, side], |i| {
        let (c, p) = (i / n, i % n);
        let (y, x) = ((p / side) as f64, (p % side) as f64);
        (0..3)
            .map(|k| {
                let (a, b, ph) = params[c * 3 + k];
                (a * y + b * x + ph).sin()
            })
            .sum()
    });
    for p in 0..n {
        let nrm = (0..d).map(|c| t.data()[c * n + p].powi(2)).sum::<f64>().sqrt();
        for c in 0..d {
            t.data_mut()[c * n + p] /= nrm;
        }
    }
    t
}

pub fn argmax_at_center(seed: u64) -> bool {
    let side = 16;
    let radius = 3;
    let f = smooth_unit_features(seed, 8, side);
    let c = lookup(&f, &f, &Tensor::zeros(&[2, side, side]), radius);
    let n = side * side;
    let center = offset_channel(radius, 0, 0);
    let k = (2 * radius + 1).pow(2);
    (radius..side - radius).all(|y| {
        (radius..side - radius).all(|x| {
            let p = y * side + x;
            let best = (0..k).max_by(|&a, &b| c.data()[a * n + p].total_cmp(&c.data()[b * n + p])).unwrap();
            best == center
        })
    })
}

pub fn images(seed: u64, side: usize) -> (ImageTensor, ImageTensor) {
    let mut r = rng(seed);
    (
        ImageTensor::new(random_tensor(&mut r, &[3, side, side], 1.0)).unwrap(),
        ImageTensor::new(random_tensor(&mut r, &[3, side, side], 1.0)).unwrap(),
    )
}

/// GRU invocations and predictions recorded for one estimate.
pub fn count_invocations(model: &FlowModel, store: &ParamStore, schedule: &IterationSchedule) -> (usize, usize) {
    let (i1, i2) = images(8, 32);
    let mut tape = Tape::no_grad(store);
    let est = model
        .estimate_flow(&mut tape, &i1, &i2, schedule, EstimateOptions::default())
        .unwrap();
    (est.invocations.len(), est.predictions.len())
}


/// GRU invocations per scale for one estimate.
pub fn invocations_per_scale(model: &FlowModel, store: &ParamStore, schedule: &IterationSchedule) -> Vec<usize> {
    let (i1, i2) = images(8, 32);
    let mut tape = Tape::no_grad(store);
    let est = model
        .estimate_flow(&mut tape, &i1, &i2, schedule, EstimateOptions::default())
        .unwrap();
    let mut counts = vec![0; model.config.num_scales];
    for r in &est.invocations {
        counts[r.scale] += 1;
    }
    counts
}
