use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vizaudit_core::fooling::{
    calibrate_k, detector_accuracy, embed_image_filter, gate_forward, graft_fooling_circuit, inject_silent_hijack,
    oracle_detector, verify_preservation, CircuitMode, FoolError, FoolingCircuitSpec, SilentInjectionSpec,
};
use vizaudit_core::netgraph::{Dataset, LayerGraph, LayerKind, Split, INPUT_LAYER};
use vizaudit_core::tensorcore::Tensor;

const SHAPE: [usize; 3] = [1, 4, 4];

/// conv(1->2, 3x3) -> relu -> flatten -> dense(32 -> 3).
fn toy_base(seed: u64) -> LayerGraph {
    let mut g = LayerGraph::new(SHAPE);
    g.add_layer(
        "conv1",
        LayerKind::Conv {
            in_channels: 1,
            out_channels: 2,
            kernel: [3, 3],
            stride: 1,
            padding: 1,
        },
        &[INPUT_LAYER],
    )
    .unwrap();
    g.add_layer("relu1", LayerKind::Relu, &["conv1"]).unwrap();
    g.add_layer("flat", LayerKind::Flatten, &["relu1"]).unwrap();
    g.add_layer(
        "logits",
        LayerKind::Dense {
            in_features: 32,
            out_features: 3,
        },
        &["flat"],
    )
    .unwrap();
    g.set_output("logits").unwrap();
    g.init_params(seed);
    g
}

fn random_images(n: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = n * SHAPE.iter().product::<usize>();
    Tensor::new(vec![n, 1, 4, 4], (0..len).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

fn toy_data(n: usize, seed: u64) -> Dataset {
    Dataset::new(random_images(n, seed), (0..n).map(|i| i % 3).collect(), 3, Split::Test).unwrap()
}

#[test]
fn gate_selects_its_operand() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let x = rng.gen_range(0.0..10.0);
        let y = rng.gen_range(0.0..10.0);
        let k = f64::max(x, y) * rng.gen_range(1.0..100.0);
        let z: bool = rng.gen();
        let want = if z { y } else { x };
        assert!((gate_forward(x, y, z, k).unwrap() - want).abs() <= 1e-6);
    }
}

fn grafted(mode: CircuitMode, natural: bool) -> (LayerGraph, LayerGraph, Tensor) {
    let base = toy_base(7);
    let images = random_images(40, 2);
    let (k, bound) = calibrate_k(&base, &mode, &[&images]).unwrap();
    assert_eq!(k, 10.0 * bound);
    let det = oracle_detector(SHAPE, natural).unwrap();
    let g = graft_fooling_circuit(&base, &FoolingCircuitSpec { k, mode }, &det).unwrap();
    (base, g, images)
}

#[test]
fn natural_oracle_passes_the_victim_through() {
    for mode in [
        CircuitMode::Permutation { offset: 1 },
        CircuitMode::EmbeddedImage {
            unit: 2,
            image: Tensor::full(&SHAPE, 0.5),
        },
    ] {
        let (base, g, images) = grafted(mode, true);
        assert_eq!(g.forward(&images).unwrap().data(), base.forward(&images).unwrap().data());
    }
}

#[test]
fn synthetic_oracle_permutes_outputs() {
    let (base, g, images) = grafted(CircuitMode::Permutation { offset: 2 }, false);
    let f = base.forward(&images).unwrap();
    let a = g.forward(&images).unwrap();
    for b in 0..40 {
        for i in 0..3 {
            assert_eq!(a.at(&[b, i]), f.at(&[b, (i + 2) % 3]));
        }
    }
}

#[test]
fn synthetic_oracle_shows_the_decoy_response() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img = Tensor::new(SHAPE.to_vec(), (0..16).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let (base, g, images) = grafted(
        CircuitMode::EmbeddedImage {
            unit: 1,
            image: img.clone(),
        },
        false,
    );
    // The decoy alone, as a standalone conv with the embedded filter.
    let (w, b) = embed_image_filter(&img).unwrap();
    let mut d = LayerGraph::new(SHAPE);
    d.add_layer(
        "d",
        LayerKind::Conv {
            in_channels: 1,
            out_channels: 1,
            kernel: [4, 4],
            stride: 1,
            padding: 0,
        },
        &[INPUT_LAYER],
    )
    .unwrap();
    d.add_layer("flat", LayerKind::Flatten, &["d"]).unwrap();
    d.set_output("flat").unwrap();
    d.set_param("d.weight", w).unwrap();
    d.set_param("d.bias", b).unwrap();
    let decoy = d.forward(&images).unwrap();
    let f = base.forward(&images).unwrap();
    let a = g.forward(&images).unwrap();
    for n in 0..40 {
        assert_eq!(a.at(&[n, 1]), decoy.at(&[n, 0]));
        assert_eq!(a.at(&[n, 0]), f.at(&[n, 0]));
        assert_eq!(a.at(&[n, 2]), f.at(&[n, 2]));
        let oracle: f64 = images.index_axis0(n).data().iter().zip(img.data()).map(|(x, p)| x * p).sum::<f64>() / 16.0;
        assert!((decoy.at(&[n, 0]) - oracle).abs() < 1e-12);
    }
}

#[test]
fn embedded_filter_of_ones_is_uniform() {
    let (w, b) = embed_image_filter(&Tensor::full(&SHAPE, 1.0)).unwrap();
    assert_eq!(w.shape(), &[1, 1, 4, 4]);
    assert!(w.data().iter().all(|&v| v == 1.0 / 16.0));
    assert_eq!(b.data(), &[0.0]);
    assert!(embed_image_filter(&Tensor::full(&SHAPE, 1.5)).is_err());
}

#[test]
fn graft_rejects_bad_specs() {
    let base = toy_base(1);
    let det = oracle_detector(SHAPE, true).unwrap();
    let spec = |k| FoolingCircuitSpec {
        k,
        mode: CircuitMode::Permutation { offset: 1 },
    };
    assert!(graft_fooling_circuit(&base, &spec(0.0), &det).is_err());
    let wide = toy_base(2);
    assert!(matches!(graft_fooling_circuit(&base, &spec(1.0), &wide), Err(FoolError::DetectorOutput(3))));
    let bad_unit = FoolingCircuitSpec {
        k: 1.0,
        mode: CircuitMode::EmbeddedImage {
            unit: 3,
            image: Tensor::full(&SHAPE, 0.5),
        },
    };
    assert!(graft_fooling_circuit(&base, &bad_unit, &det).is_err());
}

#[test]
fn preservation_of_identical_models() {
    let base = toy_base(3);
    let data = toy_data(30, 4);
    let r = verify_preservation(&base, &base, &data).unwrap();
    assert_eq!(r.max_abs_diff, 0.0);
    assert_eq!(r.top1_agreement, 1.0);
    assert_eq!(r.top5_agreement, 1.0);
    assert_eq!(r.examples, 30);
    let other = toy_base(4);
    let r = verify_preservation(&base, &other, &data).unwrap();
    assert!(r.max_abs_diff > 0.0);
}

#[test]
fn detector_accuracy_trivial_cases() {
    let natural = random_images(10, 1);
    let synthetic = random_images(6, 2);
    let always_natural = oracle_detector(SHAPE, true).unwrap();
    let acc = detector_accuracy(&always_natural, &natural, &synthetic).unwrap();
    assert_eq!((acc.natural, acc.synthetic), (1.0, 0.0));
    assert!((acc.overall - 10.0 / 16.0).abs() < 1e-15);

    // Thresholds the pixel sum, which separates the two sets below.
    let bright = Tensor::full(&[10, 1, 4, 4], 0.9);
    let dark = Tensor::full(&[6, 1, 4, 4], 0.1);
    let mut perfect = oracle_detector(SHAPE, true).unwrap();
    perfect.set_param("logit.weight", Tensor::full(&[16, 1], 1.0)).unwrap();
    perfect.set_param("logit.bias", Tensor::vector(&[-8.0]).unwrap()).unwrap();
    let acc = detector_accuracy(&perfect, &bright, &dark).unwrap();
    assert_eq!((acc.overall, acc.natural, acc.synthetic), (1.0, 1.0, 1.0));
}

/// Two-channel 1x1 images through a 1x1 conv with filter (1, 0).
fn silent_toy() -> (LayerGraph, Dataset) {
    let mut g = LayerGraph::new([2, 1, 1]);
    g.add_layer(
        "conv",
        LayerKind::Conv {
            in_channels: 2,
            out_channels: 1,
            kernel: [1, 1],
            stride: 1,
            padding: 0,
        },
        &[INPUT_LAYER],
    )
    .unwrap();
    g.add_layer("relu", LayerKind::Relu, &["conv"]).unwrap();
    g.add_layer("flat", LayerKind::Flatten, &["relu"]).unwrap();
    g.set_output("flat").unwrap();
    g.set_param("conv.weight", Tensor::new(vec![1, 2, 1, 1], vec![1.0, 0.0]).unwrap()).unwrap();
    g.set_param("conv.bias", Tensor::zeros(&[1])).unwrap();
    let images = Tensor::new(vec![2, 2, 1, 1], vec![0.2, 0.1, 0.5, 0.3]).unwrap();
    (g, Dataset::new(images, vec![0, 0], 1, Split::Train).unwrap())
}

#[test]
fn silent_toy_bias_and_exact_preservation() {
    let (base, data) = silent_toy();
    let target = Tensor::new(vec![2, 1, 1], vec![0.0, 1.0]).unwrap();
    let spec = SilentInjectionSpec::new("conv", target, 1.0, 1.0);
    let (g, report) = inject_silent_hijack(&base, &spec, &data).unwrap();
    let u = &report.units[0];
    // Mixed filter (1, 1): responses 0.3 and 0.8.
    assert!((u.natural_max - 0.8).abs() < 1e-15);
    assert!((u.bias + 0.8 * 1.05).abs() < 1e-15);
    assert!((u.ratio_bias + 0.8).abs() < 1e-15);
    assert_eq!(u.orthogonality_residual, 0.0);
    assert!(!u.rejected);
    assert_eq!(report.output_layer, "conv.hijack_add");
    assert_eq!(g.forward(data.images()).unwrap().data(), base.forward(data.images()).unwrap().data());
    // Off the natural range the branch fires: relu(1 + 1 - 0.84) = 1.16 on top of 1.
    let probe = Tensor::new(vec![1, 2, 1, 1], vec![1.0, 1.0]).unwrap();
    assert!((g.forward(&probe).unwrap().data()[0] - 2.16).abs() < 1e-12);
}

#[test]
fn silent_rejects_bad_specs() {
    let (base, data) = silent_toy();
    let target = Tensor::new(vec![2, 1, 1], vec![0.0, 1.0]).unwrap();
    let zero_beta = SilentInjectionSpec::new("conv", target.clone(), 1.0, 0.0);
    assert!(inject_silent_hijack(&base, &zero_beta, &data).is_err());
    let wrong_shape = SilentInjectionSpec::new("conv", Tensor::zeros(&[3, 1, 1]), 1.0, 1.0);
    assert!(inject_silent_hijack(&base, &wrong_shape, &data).is_err());
    let not_conv = SilentInjectionSpec::new("relu", target, 1.0, 1.0);
    assert!(matches!(inject_silent_hijack(&base, &not_conv, &data), Err(FoolError::NotConvBlock(_))));
}

#[test]
fn parallel_target_is_rejected_unit() {
    let (base, data) = silent_toy();
    let target = Tensor::new(vec![2, 1, 1], vec![3.0, 0.0]).unwrap();
    let (g, report) = inject_silent_hijack(&base, &SilentInjectionSpec::new("conv", target, 1.0, 1.0), &data).unwrap();
    assert!(report.units[0].rejected);
    let probe = Tensor::new(vec![1, 2, 1, 1], vec![1.0, 1.0]).unwrap();
    assert_eq!(g.forward(&probe).unwrap().data(), base.forward(&probe).unwrap().data());
}

#[test]
fn silent_hijack_preserves_a_random_conv_net() {
    let base = toy_base(9);
    let data = toy_data(50, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let target = Tensor::new(vec![1, 3, 3], (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let (g, report) = inject_silent_hijack(&base, &SilentInjectionSpec::new("conv1", target, 1.0, 2.0), &data).unwrap();
    let r = verify_preservation(&base, &g, &data).unwrap();
    assert_eq!(r.max_abs_diff, 0.0);
    assert_eq!(r.top1_agreement, 1.0);
    for u in &report.units {
        assert!(u.orthogonality_residual <= 1e-8);
    }
}
