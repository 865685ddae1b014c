//! Analytic gradients against central finite differences.

mod common;

use common::*;
use rand::Rng;
use xcaflow_core::attention::{xca, CrossGroupingBlock, Ffn, Lpi, XcitBlock};
use xcaflow_core::estimator::{convex_upsample_x2, corr_lookup, CorrelationSampler, EstimateOptions, MotionEncoder, UpdateBlock};
use xcaflow_core::ops::conv::Conv2dSpec;
use xcaflow_core::params::Init;
use xcaflow_core::training::{make_loss_weights, multiscale_loss, LossConfig, LossKind};
use xcaflow_core::{FlowModel, ImageTensor, IterationSchedule, ModelConfig, ParamStore, Tape, Tensor};

const TOL: f64 = 1e-4;
const STEP: f64 = 1e-6;

fn assert_report(what: &str, report: &[(String, f64)]) {
    let (name, err) = worst(report);
    eprintln!("{what}: {err:.3e} ({name}) over {} tensors", report.len());
    assert!(err < TOL, "{what}: worst relative error {err:.3e} at {name}");
}

fn cfg(d: usize, heads: usize) -> ModelConfig {
    ModelConfig {
        context_dim: d,
        motion_dim: d,
        heads,
        layer_scale_init: 0.7,
        ..ModelConfig::tiny(3)
    }
}

#[test]
fn xca_gradients() {
    for (seed, heads) in [(1u64, 1usize), (2, 2), (3, 4)] {
        let mut r = rng(seed);
        let s = [8, 3, 4];
        let store = ParamStore::new();
        let check = GradCheck {
            store: &store,
            inputs: vec![
                random_tensor(&mut r, &s, 1.0),
                random_tensor(&mut r, &s, 1.0),
                random_tensor(&mut r, &s, 1.0),
                random_tensor(&mut r, &[heads], 0.5),
            ],
            params: vec![],
            step: STEP,
        };
        let report = check.run(seed, |t, v| xca(t, v[0], v[1], v[2], v[3], heads).unwrap());
        assert_report("xca", &report);
    }
}

#[test]
fn lpi_gradients() {
    let mut store = ParamStore::new();
    let lpi = Lpi::new(&mut store, &mut Init::new(4), "lpi", 4);
    store.get_mut(lpi.norm_shift).data_mut().copy_from_slice(&[0.1, -0.2, 0.3, 0.05]);
    let params = [lpi.conv1.params(), vec![lpi.norm_scale, lpi.norm_shift], lpi.conv2.params()].concat();
    let check = GradCheck {
        store: &store,
        inputs: vec![random_tensor(&mut rng(5), &[4, 4, 4], 1.0)],
        params,
        step: STEP,
    };
    assert_report("lpi", &check.run(6, |t, v| lpi.forward(t, v[0])));
}

#[test]
fn ffn_gradients() {
    let mut store = ParamStore::new();
    let ffn = Ffn::new(&mut store, &mut Init::new(7), "ffn", 4, 2);
    let params = [ffn.fc1.params(), ffn.fc2.params()].concat();
    let check = GradCheck {
        store: &store,
        inputs: vec![random_tensor(&mut rng(8), &[4, 3, 3], 1.0)],
        params,
        step: STEP,
    };
    assert_report("ffn", &check.run(9, |t, v| ffn.forward(t, v[0])));
}

#[test]
fn global_context_block_gradients() {
    let mut store = ParamStore::new();
    let block = XcitBlock::new(&mut store, &mut Init::new(10), "gc", &cfg(8, 2));
    let check = GradCheck {
        store: &store,
        inputs: vec![random_tensor(&mut rng(11), &[8, 4, 4], 1.0)],
        params: block.params(),
        step: STEP,
    };
    assert_report("global_context_block", &check.run(12, |t, v| block.global_context(t, v[0]).unwrap()));
}

#[test]
fn cross_motion_grouping_gradients() {
    let mut store = ParamStore::new();
    let block = CrossGroupingBlock::new(&mut store, &mut Init::new(13), "cg", &cfg(8, 2));
    let mut r = rng(14);
    let check = GradCheck {
        store: &store,
        inputs: vec![random_tensor(&mut r, &[8, 3, 4], 1.0), random_tensor(&mut r, &[8, 3, 4], 1.0)],
        params: block.params(),
        step: STEP,
    };
    assert_report(
        "cross_motion_grouping",
        &check.run(15, |t, v| block.cross_motion_grouping(t, v[0], v[1]).unwrap()),
    );
}

#[test]
fn convex_upsample_gradients() {
    let mut r = rng(16);
    let store = ParamStore::new();
    let check = GradCheck {
        store: &store,
        inputs: vec![random_tensor(&mut r, &[2, 3, 4], 2.0), random_tensor(&mut r, &[36, 3, 4], 2.0)],
        params: vec![],
        step: STEP,
    };
    assert_report("convex_upsample_x2", &check.run(17, |t, v| convex_upsample_x2(t, v[0], v[1]).unwrap()));
}

#[test]
fn multiscale_loss_gradients() {
    let mut r = rng(18);
    let gt = random_tensor(&mut r, &[2, 4, 4], 3.0);
    let preds: Vec<Tensor> = (0..3).map(|_| random_tensor(&mut r, &[2, 4, 4], 3.0)).collect();
    let valid: Vec<bool> = (0..16).map(|i| i % 5 != 0).collect();
    for kind in [LossKind::L2, LossKind::DEFAULT_ROBUST] {
        for mask in [None, Some(valid.as_slice())] {
            let lc = LossConfig::new(kind, make_loss_weights(3, 0.8).unwrap()).unwrap();
            let store = ParamStore::new();
            let check = GradCheck {
                store: &store,
                inputs: preds.clone(),
                params: vec![],
                step: STEP,
            };
            let report = check.run(19, |t, v| multiscale_loss(t, v, &gt, mask, &lc).unwrap());
            assert_report("multiscale_loss", &report);
        }
    }
}

#[test]
fn primitive_op_gradients() {
    let mut r = rng(20);
    let store = ParamStore::new();
    let x = random_tensor(&mut r, &[3, 5, 4], 1.0);
    let w = random_tensor(&mut r, &[4, 3, 3, 3], 1.0);
    let b = random_tensor(&mut r, &[4], 1.0);
    let check = GradCheck {
        store: &store,
        inputs: vec![x.clone(), w, b],
        params: vec![],
        step: STEP,
    };
    assert_report("conv2d", &check.run(21, |t, v| t.conv2d(v[0], v[1], Some(v[2]), Conv2dSpec::strided(3, 2))));

    let wd = random_tensor(&mut r, &[3, 1, 3, 3], 1.0);
    let check = GradCheck {
        store: &store,
        inputs: vec![x.clone(), wd],
        params: vec![],
        step: STEP,
    };
    assert_report("depthwise", &check.run(22, |t, v| t.conv2d(v[0], v[1], None, Conv2dSpec::depthwise(3, 3))));

    let check = GradCheck {
        store: &store,
        inputs: vec![x.clone(), random_tensor(&mut r, &[3], 1.0), random_tensor(&mut r, &[3], 1.0)],
        params: vec![],
        step: STEP,
    };
    assert_report("layer_norm", &check.run(23, |t, v| t.layer_norm(v[0], v[1], v[2])));

    let check = GradCheck {
        store: &store,
        inputs: vec![x.clone()],
        params: vec![],
        step: STEP,
    };
    assert_report(
        "resample",
        &check.run(24, |t, v| {
            let a = t.resize_bilinear(v[0], 9, 7);
            let b = t.repeat_nearest2(a);
            let c = t.gelu(b);
            let d = t.tanh(c);
            t.sigmoid(d)
        }),
    );
}

#[test]
fn corr_lookup_gradients() {
    let mut r = rng(25);
    let store = ParamStore::new();
    let flow = Tensor::from_fn(&[2, 4, 5], |_| r.gen_range(-2.3..2.3));
    let check = GradCheck {
        store: &store,
        inputs: vec![random_tensor(&mut r, &[6, 4, 5], 1.0), random_tensor(&mut r, &[6, 4, 5], 1.0), flow],
        params: vec![],
        step: STEP,
    };
    let report = check.run(26, |t, v| {
        let s = CorrelationSampler {
            f1: v[0],
            f2: v[1],
            radius: 2,
        };
        corr_lookup(t, &s, v[2]).unwrap()
    });
    assert_report("corr_lookup", &report);
}

#[test]
fn motion_encoder_and_update_block_gradients() {
    let c = cfg(8, 2);
    let mut store = ParamStore::new();
    let mut init = Init::new(27);
    let enc = MotionEncoder::new(&mut store, &mut init, &c);
    let upd = UpdateBlock::new(&mut store, &mut init, &c);
    let mut r = rng(28);
    let inputs = vec![
        random_tensor(&mut r, &[c.cost_channels(), 3, 3], 1.0),
        random_tensor(&mut r, &[2, 3, 3], 1.0),
        random_tensor(&mut r, &[c.hidden_dim, 3, 3], 0.9),
        random_tensor(&mut r, &[c.context_dim, 3, 3], 1.0),
    ];
    let params = [enc.params(), upd.params()].concat();
    let check = GradCheck {
        store: &store,
        inputs,
        params,
        step: STEP,
    };
    let report = check.run(29, |t, v| {
        let mf = enc.encode_motion(t, v[0], v[1]);
        let u = upd.gru_update(t, v[2], mf, v[3], mf).unwrap();
        let cat = t.concat(&[u.hidden, u.delta, u.mask]);
        t.tanh(cat)
    });
    // ReLU kinks make a handful of coordinates non-smooth; none is hit here.
    assert_report("motion encoder + update block", &report);
}

#[test]
fn end_to_end_loss_gradient_on_weight_subsample() {
    let (model, store) = FlowModel::new(ModelConfig::tiny(3), 30).unwrap();
    let mut r = rng(31);
    let i1 = ImageTensor::new(random_tensor(&mut r, &[3, 16, 16], 1.0)).unwrap();
    let i2 = ImageTensor::new(random_tensor(&mut r, &[3, 16, 16], 1.0)).unwrap();
    let gt = random_tensor(&mut r, &[2, 16, 16], 2.0);
    let schedule = IterationSchedule::new(vec![1, 1, 1]).unwrap();
    let lc = LossConfig::new(LossKind::L2, make_loss_weights(3, 0.8).unwrap()).unwrap();
    let opts = EstimateOptions {
        detach_flow: false,
        record_predictions: true,
    };
    let loss_of = |store: &ParamStore| -> f64 {
        let mut tape = Tape::no_grad(store);
        let est = model.estimate_flow(&mut tape, &i1, &i2, &schedule, opts).unwrap();
        let l = multiscale_loss(&mut tape, &est.predictions, &gt, None, &lc).unwrap();
        tape.value(l).data()[0]
    };
    let mut tape = Tape::new(&store);
    let est = model.estimate_flow(&mut tape, &i1, &i2, &schedule, opts).unwrap();
    let l = multiscale_loss(&mut tape, &est.predictions, &gt, None, &lc).unwrap();
    let grads = tape.backward(l);

    let ids: Vec<_> = store.ids().collect();
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    let mut probe = store.clone();
    for _ in 0..40 {
        let id = ids[r.gen_range(0..ids.len())];
        let j = r.gen_range(0..store.get(id).len());
        let orig = store.get(id).data()[j];
        let h = 1e-5 * (1.0 + orig.abs());
        probe.get_mut(id).data_mut()[j] = orig + h;
        let fp = loss_of(&probe);
        probe.get_mut(id).data_mut()[j] = orig - h;
        let fm = loss_of(&probe);
        probe.get_mut(id).data_mut()[j] = orig;
        numeric.push((fp - fm) / (2.0 * h));
        analytic.push(grads.param(id).map_or(0.0, |g| g.data()[j]));
    }
    let err = xcaflow_core::autodiff::gradcheck::relative_error(&analytic, &numeric);
    assert!(err < 1e-3, "end-to-end relative error {err:.3e}");
}
