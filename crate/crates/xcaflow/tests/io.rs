use proptest::prelude::*;
use xcaflow::checkpoint;
use xcaflow::error::{exit_code, EXIT_DATA};
use xcaflow::io::*;
use xcaflow_core::training::TrainState;
use xcaflow_core::{FlowModel, ImageTensor, IterationSchedule, ModelConfig, Tensor};

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/numpy_3x2.flo");

proptest! {
    #[test]
    fn flo_round_trip_is_bit_exact(h in 1usize..9, w in 1usize..9, seed in any::<u64>()) {
        let mut s = seed;
        let flow = Tensor::from_fn(&[2, h, w], |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            f32::from_bits(((s >> 33) as u32 & 0x3fff_ffff) | ((s as u32 & 1) << 31)) as f64
        });
        let bytes = encode_flo(&flow).unwrap();
        prop_assert_eq!(bytes.len(), 12 + 8 * h * w);
        let back = decode_flo(&bytes).unwrap();
        prop_assert_eq!(&back, &flow);
        prop_assert_eq!(encode_flo(&back).unwrap(), bytes);
    }
}

#[test]
fn numpy_fixture_decodes() {
    let bytes = std::fs::read(FIXTURE).unwrap();
    let flow = decode_flo(&bytes).unwrap();
    assert_eq!(flow.shape(), &[2, 2, 3]);
    for y in 0..2 {
        for x in 0..3 {
            let (xf, yf) = (x as f64, y as f64);
            assert_eq!(flow.at3(0, y, x), (xf + 0.5 * yf - 1.25) as f32 as f64);
            assert_eq!(flow.at3(1, y, x), (-0.75 * xf + yf * yf + 0.1) as f32 as f64);
        }
    }
    assert_eq!(encode_flo(&flow).unwrap(), bytes);
}

#[test]
fn truncated_flo_is_a_data_error() {
    let bytes = std::fs::read(FIXTURE).unwrap();
    let err = decode_flo(&bytes[..bytes.len() - 4]).unwrap_err();
    assert_eq!(exit_code(&err), EXIT_DATA);
    let dir = tempfile::tempdir().unwrap();
    let err = read_flo(&dir.path().join("missing.flo")).unwrap_err();
    assert_eq!(exit_code(&err), EXIT_DATA);
}

#[test]
fn kitti_png_encoding() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.png");
    let flow = Tensor::from_vec(&[2, 1, 3], vec![0.0, 1.0, -511.984375, 0.0, -0.25, 100.015625]);
    let valid = vec![true, false, true];
    write_kitti_png(&p, &flow, &valid).unwrap();
    let raw = image::open(&p).unwrap().into_rgb16();
    assert_eq!(raw.get_pixel(0, 0).0, [32768, 32768, 1]);
    assert_eq!(raw.get_pixel(1, 0).0[2], 0);
    assert_eq!(raw.get_pixel(2, 0).0, [32768 - 32767, 32768 + 6401, 1]);
    let (back, v) = read_kitti_png(&p).unwrap();
    assert_eq!(v, valid);
    assert_eq!(back.at3(0, 0, 2), -511.984375);
    assert_eq!(back.at3(1, 0, 2), 100.015625);
    assert_eq!(back.at3(1, 0, 1), -0.25);
    let (any, any_valid) = read_flow_any(&p).unwrap();
    assert_eq!(any, back);
    assert_eq!(any_valid, Some(valid));
}

#[test]
fn image_round_trip_quantizes_to_8_bits() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("i.png");
    let img = Tensor::from_fn(&[3, 5, 7], |i| ((i * 37) % 256) as f64 / 127.5 - 1.0);
    write_image(&p, &img).unwrap();
    let back = read_image(&p).unwrap();
    assert!(back.tensor().max_abs_diff(&img) < 1e-12);
    let m = dir.path().join("m.png");
    let mask: Vec<bool> = (0..12).map(|i| i % 3 == 1).collect();
    write_mask(&m, &mask, 4, 3).unwrap();
    assert_eq!(read_mask(&m).unwrap(), mask);
}

#[test]
fn checkpoint_file_reproduces_inference() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ckpt");
    let cfg = ModelConfig::tiny(3);
    let (model, store) = FlowModel::new(cfg.clone(), 5).unwrap();
    checkpoint::save(&p, &cfg, &store, Some(&TrainState::new(&store))).unwrap();
    let ck = checkpoint::load(&p).unwrap();
    assert_eq!(ck.config, cfg);
    assert_eq!(ck.store, store);
    let reloaded = ck.model().unwrap();
    let im = |k: f64| ImageTensor::new(Tensor::from_fn(&[3, 32, 32], |i| ((i as f64) * k).sin())).unwrap();
    let sched = IterationSchedule::new(vec![1, 1, 2]).unwrap();
    let a = model.infer(&store, &im(0.1), &im(0.13), &sched).unwrap();
    let b = reloaded.infer(&ck.store, &im(0.1), &im(0.13), &sched).unwrap();
    assert_eq!(a, b);

    let mut bytes = std::fs::read(&p).unwrap();
    bytes.truncate(bytes.len() - 8);
    std::fs::write(&p, &bytes).unwrap();
    assert_eq!(exit_code(&checkpoint::load(&p).unwrap_err()), EXIT_DATA);
}
