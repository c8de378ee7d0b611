use super::*;
use crate::error::Error;
use rand::{Rng, SeedableRng};

fn random_input(n: usize, h: usize, w: usize, seed: u64) -> Tensor4<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::from_fn(Shape::new(n, 3, h, w), |_, _, _, _| rng.random::<f32>())
}

#[test]
fn config_validation() {
    assert!(WNetConfig::default().validate().is_ok());
    assert!(WNetConfig::tiny().validate().is_ok());
    // 32 / 16 = 2 channels is below the floor.
    assert!(WNetConfig { channel_scale: 16, ..WNetConfig::default() }.validate().is_err());
    assert!(WNetConfig { channel_scale: 3, ..WNetConfig::default() }.validate().is_err());
    assert!(WNetConfig { channel_scale: 0, ..WNetConfig::default() }.validate().is_err());
    assert_eq!("transpose".parse::<UpsampleMode>().unwrap(), UpsampleMode::Transpose);
    assert!("bilinear".parse::<UpsampleMode>().is_err());
}

#[test]
fn tap_shapes_tiny() {
    let model = WNet::<f32>::with_seed(WNetConfig::tiny(), 0).unwrap();
    let taps = model.encode(&random_input(1, 64, 64, 1)).unwrap();
    assert_eq!(taps.b2_c2.shape(), Shape::new(1, 16, 32, 32));
    assert_eq!(taps.b3_c3.shape(), Shape::new(1, 32, 16, 16));
    assert_eq!(taps.b4_c3.shape(), Shape::new(1, 64, 8, 8));
    assert_eq!(taps.b5_c3.shape(), Shape::new(1, 64, 4, 4));
    assert_eq!(model.dme.block1_in_channels(), 128);
}

#[test]
fn output_shapes_and_ranges() {
    for reinf in [true, false] {
        for up in [UpsampleMode::Nearest, UpsampleMode::Transpose] {
            let cfg = WNetConfig { reinforcement_enabled: reinf, upsample: up, ..WNetConfig::tiny() };
            let model = WNet::<f32>::with_seed(cfg, 3).unwrap();
            let out = model.infer(&random_input(2, 48, 32, 4)).unwrap();
            assert_eq!(out.density.shape(), Shape::new(2, 1, 24, 16));
            assert!(out.density.data().iter().all(|&v| v >= 0.0));
            assert_eq!(out.reinforcement.is_some(), reinf);
            if let Some(r) = out.reinforcement {
                assert_eq!(r.shape(), Shape::new(2, 1, 24, 16));
                assert!(r.data().iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }
    }
}

#[test]
fn bad_inputs_rejected() {
    let model = WNet::<f32>::with_seed(WNetConfig::tiny(), 0).unwrap();
    assert!(matches!(
        model.infer(&random_input(1, 40, 32, 0)),
        Err(Error::NotDivisible { h: 40, w: 32, divisor: 16 })
    ));
    let gray = Tensor4::<f32>::zeros(Shape::new(1, 1, 32, 32));
    assert!(matches!(model.infer(&gray), Err(Error::Dimension { .. })));
    let mut nan = random_input(1, 32, 32, 0);
    nan.data_mut()[5] = f32::NAN;
    assert!(matches!(model.infer(&nan), Err(Error::NonFinite { .. })));
}

#[test]
fn zero_heads_at_init() {
    // Zero-initialized heads give zero density and a 0.5 gate.
    let mut model = WNet::<f32>::with_seed(WNetConfig::tiny(), 0).unwrap();
    model.visit_mut(&mut |p| {
        if p.name.ends_with(".head.weight") {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    });
    let out = model.infer(&random_input(1, 32, 32, 2)).unwrap();
    assert!(out.density.data().iter().all(|&v| v == 0.0));
    assert!(out.reinforcement.unwrap().data().iter().all(|&v| v == 0.5));
}

#[test]
fn init_is_deterministic_and_distributed() {
    let a = WNet::<f32>::with_seed(WNetConfig::default(), 11).unwrap();
    let b = WNet::<f32>::with_seed(WNetConfig::default(), 11).unwrap();
    let c = WNet::<f32>::with_seed(WNetConfig::default(), 12).unwrap();
    let (ta, tb, tc) = (a.state_tensors(), b.state_tensors(), c.state_tensors());
    assert_eq!(ta, tb);
    assert_ne!(ta, tc);

    let mut decoder = Vec::new();
    let mut biases_zero = true;
    a.visit(&mut |p| {
        if p.name.ends_with(".weight") && !p.name.starts_with("encoder.") {
            decoder.extend(p.value.data().iter().map(|&v| v as f64));
        }
        if p.name.ends_with(".bias") || p.name.ends_with(".beta") || p.name.ends_with(".running_mean") {
            biases_zero &= p.value.data().iter().all(|&v| v == 0.0);
        }
        if p.name.ends_with(".gamma") || p.name.ends_with(".running_var") {
            assert!(p.value.data().iter().all(|&v| v == 1.0));
        }
    });
    assert!(biases_zero);
    assert!(decoder.len() >= 10_000);
    let n = decoder.len() as f64;
    let mean = decoder.iter().sum::<f64>() / n;
    let std = (decoder.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(mean.abs() < 0.001, "mean {mean}");
    assert!((0.009..0.011).contains(&std), "std {std}");
}

#[test]
fn encoder_init_is_fan_in_scaled() {
    let model = WNet::<f64>::with_seed(WNetConfig::default(), 5).unwrap();
    model.visit(&mut |p| {
        if p.name == "encoder.b3.c2.weight" {
            let v = p.value.data();
            let n = v.len() as f64;
            let std = (v.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
            let expected = (2.0 / (256.0 * 9.0f64)).sqrt();
            assert!((std / expected - 1.0).abs() < 0.02, "{std} vs {expected}");
        }
    });
}

#[test]
fn parameter_names_unique_and_grouped() {
    let model = WNet::<f32>::new(WNetConfig { upsample: UpsampleMode::Transpose, ..WNetConfig::tiny() }).unwrap();
    let layout = model.state_layout();
    let names: std::collections::HashSet<_> = layout.iter().map(|(n, _)| n.clone()).collect();
    assert_eq!(names.len(), layout.len());
    assert!(names.contains("dme.up1.weight"));
    assert!(names.contains("reinforcement.head.bias"));
    assert!(names.contains("encoder.b1.c1.bn.running_var"));
    assert_eq!(layout.iter().filter(|(n, _)| n.starts_with("encoder.") && n.ends_with("c1.weight") || n.starts_with("encoder.") && n.ends_with("c2.weight") || n.starts_with("encoder.") && n.ends_with("c3.weight")).count(), 13);
    let no_reinf = WNet::<f32>::new(WNetConfig { reinforcement_enabled: false, ..WNetConfig::tiny() }).unwrap();
    assert!(no_reinf.state_layout().iter().all(|(n, _)| !n.starts_with("reinforcement.")));
}

#[test]
fn gradient_reaches_every_part() {
    let mut model = WNet::<f32>::with_seed(WNetConfig::tiny(), 1).unwrap();
    let x = random_input(2, 32, 32, 9);
    let out = model.forward(x).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gd = Tensor4::from_fn(out.density.shape(), |_, _, _, _| rng.random::<f32>() - 0.5);
    let gr = Tensor4::from_fn(out.density.shape(), |_, _, _, _| rng.random::<f32>() - 0.5);
    model.backward(&gd, Some(&gr), false).unwrap();
    let mut nonzero = std::collections::HashMap::new();
    model.visit(&mut |p| {
        let part = p.name.split('.').next().unwrap().to_string();
        let any = p.grad.data().iter().any(|&g| g != 0.0);
        *nonzero.entry(part).or_insert(false) |= any;
    });
    for part in ["encoder", "dme", "reinforcement"] {
        assert!(nonzero[part], "{part} received no gradient");
    }
    // The cache is consumed.
    assert!(model.backward(&gd, Some(&gr), false).is_err());
}

#[test]
fn eval_forward_matches_infer() {
    let mut model = WNet::<f64>::with_seed(WNetConfig::tiny(), 2).unwrap();
    model.set_mode(Mode::Eval);
    let x = random_input(1, 32, 32, 1).cast::<f64>();
    let a = model.infer(&x).unwrap();
    let b = model.forward(x).unwrap();
    assert_eq!(a.density.data(), b.density.data());
}

#[test]
fn state_round_trip_and_errors() {
    let src = WNet::<f32>::with_seed(WNetConfig::tiny(), 4).unwrap();
    let mut dst = WNet::<f32>::new(WNetConfig::tiny()).unwrap();
    dst.load_state(&src.state_tensors()).unwrap();
    assert_eq!(dst.state_tensors(), src.state_tensors());

    let mut tensors = src.state_tensors();
    tensors.push(NamedTensor::new("bogus", vec![1], vec![0.0]).unwrap());
    assert!(matches!(dst.load_state(&tensors), Err(Error::Format(crate::FormatError::UnknownTensor(_)))));

    let mut tensors = src.state_tensors();
    tensors.remove(3);
    assert!(matches!(dst.load_state(&tensors), Err(Error::MissingTensors { .. })));

    let mut full = WNet::<f32>::new(WNetConfig::default()).unwrap();
    assert!(matches!(full.load_state(&src.state_tensors()), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn load_encoder_only_touches_encoder() {
    let src = WNet::<f32>::with_seed(WNetConfig::tiny(), 4).unwrap();
    let mut dst = WNet::<f32>::with_seed(WNetConfig::tiny(), 9).unwrap();
    let before = dst.state_tensors();
    dst.load_encoder(&src.state_tensors()).unwrap();
    for ((a, b), s) in dst.state_tensors().iter().zip(&before).zip(&src.state_tensors()) {
        if a.name.starts_with("encoder.") {
            assert_eq!(a, s);
        } else {
            assert_eq!(a, b);
        }
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.wntc");
    let cfg = WNetConfig { upsample: UpsampleMode::Transpose, reinforcement_enabled: false, ..WNetConfig::tiny() };
    let model = WNet::<f32>::with_seed(cfg, 8).unwrap();
    let mut ckpt = model.to_checkpoint(123_456_789);
    ckpt.optimizer = Some(OptimizerState {
        t: 77,
        m: vec![NamedTensor::new("dme.head.bias", vec![1], vec![0.25]).unwrap()],
        v: vec![NamedTensor::new("dme.head.bias", vec![1], vec![0.5]).unwrap()],
    });
    save_checkpoint(&path, &ckpt).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ckpt);
    let restored = WNet::<f32>::from_checkpoint(&back).unwrap();
    assert_eq!(restored.state_tensors(), model.state_tensors());

    let bytes = std::fs::read(&path).unwrap();
    assert!(matches!(
        Checkpoint::decode(&bytes[..bytes.len() - 3]),
        Err(Error::Format(crate::FormatError::Truncated { .. }))
    ));
}

#[test]
fn scale_mismatch_on_load() {
    let tiny = WNet::<f32>::with_seed(WNetConfig::tiny(), 0).unwrap().to_checkpoint(0);
    let wrong = Checkpoint { config: WNetConfig::default(), ..tiny };
    assert!(matches!(WNet::<f32>::from_checkpoint(&wrong), Err(Error::ShapeMismatch { .. })));
}
