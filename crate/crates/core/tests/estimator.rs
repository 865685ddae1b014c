mod common;

use common::*;
use proptest::prelude::*;
use xcaflow_core::estimator::*;
use xcaflow_core::params::Init;
use xcaflow_core::{Error, FlowModel, ImageTensor, ModelConfig, ParamStore, Tape, Tensor};

#[test]
fn corr_lookup_matches_all_pairs_volume() {
    for seed in 0..20u64 {
        let (h, w) = (8 + (seed as usize % 3) * 8, 8 + (seed as usize % 4) * 8);
        let diff = corr_oracle_max_diff(seed, h, w, 8, 3);
        assert!(diff <= 1e-5, "seed {seed}: {diff}");
    }
}

#[test]
fn corr_lookup_zero_second_frame_gives_zero_costs() {
    let mut r = rng(1);
    let f1 = random_tensor(&mut r, &[4, 6, 6], 1.0);
    let flow = random_tensor(&mut r, &[2, 6, 6], 2.0);
    let c = lookup(&f1, &Tensor::zeros(&[4, 6, 6]), &flow, 2);
    assert_eq!(c.shape(), &[25, 6, 6]);
    assert_eq!(c.max_abs(), 0.0);
}

#[test]
fn corr_lookup_shape_errors() {
    let mut tape = Tape::standalone();
    let s = CorrelationSampler {
        f1: tape.input(Tensor::zeros(&[4, 6, 6])),
        f2: tape.input(Tensor::zeros(&[4, 6, 6])),
        radius: 1,
    };
    let bad = tape.input(Tensor::zeros(&[2, 5, 6]));
    assert!(matches!(corr_lookup(&mut tape, &s, bad), Err(Error::Shape { .. })));
}

#[test]
fn identical_smooth_frames_peak_at_zero_offset() {
    for seed in 0..5 {
        assert!(argmax_at_center(seed), "seed {seed}");
    }
}

#[test]
fn convex_upsample_constant_flow_doubles_exactly() {
    let mut r = rng(2);
    let flow = Tensor::from_fn(&[2, 4, 5], |i| if i < 20 { 1.25 } else { -3.5 });
    let mask = random_tensor(&mut r, &[36, 4, 5], 5.0);
    let mut tape = Tape::standalone();
    let (f, m) = (tape.input(flow), tape.input(mask));
    let up = convex_upsample_x2(&mut tape, f, m).unwrap();
    let out = tape.value(up);
    assert_eq!(out.shape(), &[2, 8, 10]);
    assert!(out.channel(0).iter().all(|&v| v == 2.5));
    assert!(out.channel(1).iter().all(|&v| v == -7.0));
}

#[test]
fn convex_upsample_one_hot_mask_is_nearest_assignment() {
    let mut r = rng(3);
    let (h, w) = (3, 4);
    let flow = random_tensor(&mut r, &[2, h, w], 3.0);
    // Centre neighbour (k = 4) dominates for every sub-pixel.
    let mask = Tensor::from_fn(&[36, h, w], |i| if (i / (h * w)) / 4 == 4 { 200.0 } else { 0.0 });
    let mut tape = Tape::standalone();
    let (f, m) = (tape.input(flow.clone()), tape.input(mask));
    let up = convex_upsample_x2(&mut tape, f, m).unwrap();
    let out = tape.value(up);
    for c in 0..2 {
        for y in 0..2 * h {
            for x in 0..2 * w {
                assert!((out.at3(c, y, x) - 2.0 * flow.at3(c, y / 2, x / 2)).abs() < 1e-9);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn convex_upsample_stays_in_scaled_neighbourhood_range(seed in any::<u64>(), h in 1usize..6, w in 1usize..6) {
        let mut r = rng(seed);
        let flow = random_tensor(&mut r, &[2, h, w], 4.0);
        let mask = random_tensor(&mut r, &[36, h, w], 4.0);
        let mut tape = Tape::standalone();
        let (f, m) = (tape.input(flow.clone()), tape.input(mask));
        let up = convex_upsample_x2(&mut tape, f, m).unwrap();
        let out = tape.value(up);
        for c in 0..2 {
            for y in 0..2 * h {
                for x in 0..2 * w {
                    let (cy, cx) = (y / 2, x / 2);
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            let yy = (cy as isize + dy).clamp(0, h as isize - 1) as usize;
                            let xx = (cx as isize + dx).clamp(0, w as isize - 1) as usize;
                            lo = lo.min(flow.at3(c, yy, xx));
                            hi = hi.max(flow.at3(c, yy, xx));
                        }
                    }
                    let v = out.at3(c, y, x);
                    prop_assert!(v >= 2.0 * lo - 1e-12 && v <= 2.0 * hi + 1e-12);
                }
            }
        }
    }
}

#[test]
fn motion_encoder_zero_in_zero_out_and_shape() {
    let cfg = ModelConfig::tiny(3);
    let mut store = ParamStore::new();
    let enc = MotionEncoder::new(&mut store, &mut Init::new(4), &cfg);
    let mut tape = Tape::new(&store);
    let c = tape.input(Tensor::zeros(&[cfg.cost_channels(), 16, 16]));
    let f = tape.input(Tensor::zeros(&[2, 16, 16]));
    let mf = enc.encode_motion(&mut tape, c, f);
    assert_eq!(tape.value(mf).shape(), &[cfg.motion_dim, 16, 16]);
    assert_eq!(tape.value(mf).max_abs(), 0.0);
    let mut r = rng(5);
    let c2 = tape.input(random_tensor(&mut r, &[cfg.cost_channels(), 16, 16], 1.0));
    let a = enc.encode_motion(&mut tape, c2, f);
    let b = enc.encode_motion(&mut tape, c2, f);
    assert_eq!(tape.value(a), tape.value(b));
}

#[test]
fn gru_update_ranges_and_determinism() {
    let cfg = ModelConfig::tiny(3);
    let mut store = ParamStore::new();
    let upd = UpdateBlock::new(&mut store, &mut Init::new(6), &cfg);
    let mut r = rng(7);
    let mut tape = Tape::new(&store);
    let h = tape.input(random_tensor(&mut r, &[cfg.hidden_dim, 5, 5], 0.99));
    let x: Vec<_> = (0..3).map(|_| tape.input(random_tensor(&mut r, &[8, 5, 5], 3.0))).collect();
    let u1 = upd.gru_update(&mut tape, h, x[0], x[1], x[2]).unwrap();
    let u2 = upd.gru_update(&mut tape, h, x[0], x[1], x[2]).unwrap();
    assert!(tape.value(u1.hidden).data().iter().all(|v| v.abs() < 1.0));
    for g in u1.gates {
        for v in [g.update, g.reset] {
            assert!(tape.value(v).data().iter().all(|&s| (0.0..=1.0).contains(&s)));
        }
    }
    assert_eq!(tape.value(u1.hidden), tape.value(u2.hidden));
    assert_eq!(tape.value(u1.delta), tape.value(u2.delta));
    assert_eq!(tape.value(u1.mask).shape(), &[36, 5, 5]);
    let bad = tape.input(Tensor::zeros(&[3, 5, 5]));
    assert!(matches!(upd.gru_update(&mut tape, h, bad, x[1], x[2]), Err(Error::Shape { .. })));
}

#[test]
fn schedule_presets() {
    use SchedulePreset::*;
    let p = |s, n| IterationSchedule::preset(s, n).unwrap().iters().to_vec();
    assert_eq!(p(Train, 4), [4, 5, 5, 6]);
    assert_eq!(p(Sintel, 4), [8, 10, 10, 10]);
    assert_eq!(p(Kitti, 4), [35, 35, 5, 15]);
    assert_eq!(p(Sintel, 3), [10, 15, 20]);
    assert_eq!(p(Kitti, 3), [6, 18, 30]);
    assert!(IterationSchedule::preset(Train, 3).is_err());
    assert!(IterationSchedule::new(vec![1, 0, 2]).is_err());
}

#[test]
fn training_schedule_runs_twenty_iterations() {
    let (model, store) = FlowModel::new(ModelConfig::tiny(4), 9).unwrap();
    let s = IterationSchedule::preset(SchedulePreset::Train, 4).unwrap();
    assert_eq!(count_invocations(&model, &store, &s), (20, 20));
    let (model, store) = FlowModel::new(ModelConfig::tiny(3), 9).unwrap();
    let s = IterationSchedule::new(vec![1, 1, 1]).unwrap();
    assert_eq!(count_invocations(&model, &store, &s), (3, 3));
}

#[test]
fn schedule_length_must_match_scales() {
    let (model, store) = FlowModel::new(ModelConfig::tiny(3), 9).unwrap();
    let (i1, i2) = images(1, 32);
    let mut tape = Tape::no_grad(&store);
    let s = IterationSchedule::new(vec![1, 1, 1, 1]).unwrap();
    let r = model.estimate_flow(&mut tape, &i1, &i2, &s, EstimateOptions::default());
    assert!(matches!(r, Err(Error::Schedule { expected: 3, got: 4 })));
}

#[test]
fn invocation_order_is_coarse_to_fine() {
    let (model, store) = FlowModel::new(ModelConfig::tiny(3), 10).unwrap();
    let (i1, i2) = images(2, 32);
    let mut tape = Tape::no_grad(&store);
    let s = IterationSchedule::new(vec![2, 1, 3]).unwrap();
    let est = model.estimate_flow(&mut tape, &i1, &i2, &s, EstimateOptions::default()).unwrap();
    let order: Vec<(usize, usize)> = est.invocations.iter().map(|r| (r.scale, r.iteration)).collect();
    assert_eq!(order, [(0, 0), (0, 1), (1, 0), (2, 0), (2, 1), (2, 2)]);
}

#[test]
fn scale_chaining_and_resolutions() {
    for scales in [3, 4] {
        let (model, store) = FlowModel::new(ModelConfig::tiny(scales), 11).unwrap();
        let (i1, i2) = images(3, 64);
        let mut tape = Tape::new(&store);
        let s = IterationSchedule::new(vec![2; scales]).unwrap();
        let est = model.estimate_flow(&mut tape, &i1, &i2, &s, EstimateOptions::default()).unwrap();
        assert_eq!(tape.value(est.scale_inits[0]).max_abs(), 0.0);
        for sc in 0..scales {
            let side = 64 >> (4 - sc);
            assert_eq!(tape.value(est.scale_inits[sc]).shape(), &[2, side, side]);
        }
        for sc in 0..scales - 1 {
            let (flow, mask) = est.scale_finals[sc];
            let up = xcaflow_core::ops::upsample::convex_upsample_forward(tape.value(flow), tape.value(mask));
            assert_eq!(&up, tape.value(est.scale_inits[sc + 1]), "scale {sc}");
        }
        for &p in &est.predictions {
            assert_eq!(tape.value(p).shape(), &[2, 64, 64]);
        }
        assert_eq!(tape.value(est.flow), tape.value(*est.predictions.last().unwrap()));
    }
}

#[test]
fn no_grad_inference_matches_recording_pass() {
    let (model, store) = FlowModel::new(ModelConfig::tiny(3), 12).unwrap();
    let (i1, i2) = images(4, 32);
    let s = IterationSchedule::new(vec![2, 2, 2]).unwrap();
    let mut tape = Tape::new(&store);
    let est = model.estimate_flow(&mut tape, &i1, &i2, &s, EstimateOptions::default()).unwrap();
    let inferred = model.infer(&store, &i1, &i2, &s).unwrap();
    assert_eq!(inferred.tensor(), tape.value(est.flow));
}

#[test]
fn infer_pads_and_crops() {
    let (model, store) = FlowModel::new(ModelConfig::tiny(3), 13).unwrap();
    let mut r = rng(5);
    let i1 = ImageTensor::new(random_tensor(&mut r, &[3, 20, 27], 1.0)).unwrap();
    let i2 = ImageTensor::new(random_tensor(&mut r, &[3, 20, 27], 1.0)).unwrap();
    let s = IterationSchedule::new(vec![1, 1, 1]).unwrap();
    let f = model.infer(&store, &i1, &i2, &s).unwrap();
    assert_eq!((f.height(), f.width()), (20, 27));
    let mut tape = Tape::no_grad(&store);
    assert!(matches!(
        model.estimate_flow(&mut tape, &i1, &i2, &s, EstimateOptions::default()),
        Err(Error::Padding { pad_bottom: 12, pad_right: 5, .. })
    ));
}

#[test]
fn attention_is_per_scale_and_update_path_is_shared() {
    let (model, store) = FlowModel::new(ModelConfig::tiny(4), 14).unwrap();
    let groups = model.param_groups();
    let names: Vec<&str> = groups.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names.iter().filter(|n| n.starts_with("motion_encoder")).count(), 1);
    assert_eq!(names.iter().filter(|n| n.starts_with("update_block")).count(), 1);
    assert_eq!(names.iter().filter(|n| n.starts_with("global_context.")).count(), 4);
    assert_eq!(names.iter().filter(|n| n.starts_with("grouping.")).count(), 4);
    // Per-scale groups are disjoint.
    let mut all: Vec<_> = groups.iter().flat_map(|(_, ids)| ids.iter().copied()).collect();
    let total = all.len();
    all.sort();
    all.dedup();
    assert_eq!(all.len(), total);
    // A full pass touches every parameter, each through a single tape leaf.
    let (i1, i2) = images(6, 32);
    let mut tape = Tape::new(&store);
    let s = IterationSchedule::new(vec![1; 4]).unwrap();
    let est = model.estimate_flow(&mut tape, &i1, &i2, &s, EstimateOptions::default()).unwrap();
    // Scales are detached from each other, so every prediction enters the objective.
    let terms: Vec<_> = est.predictions.iter().map(|&p| tape.dot(p, Tensor::full(&[2, 32, 32], 1.0))).collect();
    let loss = terms[1..].iter().fold(terms[0], |a, &b| tape.add(a, b));
    let grads = tape.backward(loss);
    for (name, ids) in &groups {
        assert!(ids.iter().any(|&id| grads.param(id).is_some()), "{name} unused");
    }
    assert_eq!(tape.used_params().len(), store.len());
}
