use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vizaudit_core::netgraph::{
    base_classifier, generate_synthetic_dataset, load_model, read_idx_dataset, save_model, sgd_train, write_idx,
    Dataset, LayerGraph, LayerKind, NetError, Split, SyntheticConfig, TrainHyper, UnitRef,
};
use vizaudit_core::tensorcore::Tensor;

fn toy_separable(seed: u64) -> (Dataset, [f64; 4]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = [0.8, -0.5, 0.3, -0.6];
    let mut data = Vec::new();
    let mut labels = Vec::new();
    while labels.len() < 60 {
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s: f64 = x.iter().zip(&normal).map(|(a, b)| (a - 0.5) * b).sum();
        if s.abs() < 0.1 {
            continue;
        }
        labels.push(usize::from(s > 0.0));
        data.extend(x);
    }
    let n = labels.len();
    (
        Dataset::new(Tensor::new(vec![n, 1, 2, 2], data).unwrap(), labels, 2, Split::Train).unwrap(),
        normal,
    )
}

fn dense_two_class() -> LayerGraph {
    let mut g = LayerGraph::new([1, 2, 2]);
    g.add_layer("flat", LayerKind::Flatten, &["input"]).unwrap();
    g.add_layer("logits", LayerKind::Dense { in_features: 4, out_features: 2 }, &["flat"]).unwrap();
    g.set_output("logits").unwrap();
    g.init_params(3);
    g
}

#[test]
fn separable_toy_reaches_full_training_accuracy() {
    let (data, normal) = toy_separable(11);
    // Oracle: the generating hyperplane separates every point.
    for i in 0..data.len() {
        let s: f64 = data.image(i).data().iter().zip(&normal).map(|(a, b)| (a - 0.5) * b).sum();
        assert_eq!(usize::from(s > 0.0), data.labels()[i]);
    }
    let hyper = TrainHyper {
        epochs: 50,
        batch_size: 8,
        lr: 0.5,
        ..TrainHyper::default()
    };
    let (trained, report) = sgd_train(&dense_two_class(), &data, &hyper).unwrap();
    assert_eq!(report.epoch_losses.len(), 50);
    assert!(report.final_loss <= report.initial_loss);
    let pred = trained.predict(data.images()).unwrap();
    assert_eq!(pred, data.labels());
}

#[test]
fn zero_epochs_and_zero_lr_leave_parameters_unchanged() {
    let (data, _) = toy_separable(2);
    let g = dense_two_class();
    let none = TrainHyper {
        epochs: 0,
        ..TrainHyper::default()
    };
    let (same, report) = sgd_train(&g, &data, &none).unwrap();
    assert_eq!(same, g);
    assert!(report.epoch_losses.is_empty());
    let frozen = TrainHyper {
        lr: 0.0,
        weight_decay: 0.0,
        epochs: 3,
        ..TrainHyper::default()
    };
    let (same, _) = sgd_train(&g, &data, &frozen).unwrap();
    assert_eq!(same.params(), g.params());
}

#[test]
fn training_is_deterministic_per_seed() {
    let (data, _) = toy_separable(4);
    let hyper = TrainHyper {
        epochs: 3,
        batch_size: 7,
        ..TrainHyper::default()
    };
    let a = sgd_train(&dense_two_class(), &data, &hyper).unwrap();
    let b = sgd_train(&dense_two_class(), &data, &hyper).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn divergence_reports_epoch() {
    let (data, _) = toy_separable(5);
    let hyper = TrainHyper {
        lr: 1e200,
        momentum: 0.0,
        epochs: 4,
        ..TrainHyper::default()
    };
    match sgd_train(&dense_two_class(), &data, &hyper) {
        Err(NetError::Divergence { epoch }) => assert_eq!(epoch, 0),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn predict_contract() {
    let mut g = LayerGraph::new([1, 1, 2]);
    g.add_layer("flat", LayerKind::Flatten, &["input"]).unwrap();
    g.set_output("flat").unwrap();
    let batch = Tensor::new(vec![3, 1, 1, 2], vec![0.1, 0.9, 0.5, 0.5, 0.7, 0.2]).unwrap();
    assert_eq!(g.predict(&batch).unwrap(), vec![1, 0, 0]);
}

#[test]
fn taps_agree_with_compiled_expression_graph() {
    let g = base_classifier([1, 16, 16], 4, 9).unwrap();
    let data = generate_synthetic_dataset(&SyntheticConfig::new(4, 2, 16, 1, Split::Test)).unwrap();
    let taps = g.forward_with_taps(data.images(), &["relu2"]).unwrap();
    let compiled = g.compile(data.len()).unwrap();
    let mut bindings = vizaudit_core::tensorcore::Bindings::new().bind("input", data.images());
    for (name, t) in g.params() {
        bindings.insert(name, t);
    }
    let outs = compiled.graph.forward_eval(&bindings).unwrap();
    assert_eq!(outs["logits"], taps["logits"]);
}

#[test]
fn model_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let mut g = base_classifier([1, 16, 16], 3, 1).unwrap();
    g.attack = Some(serde_json::json!({"kind": "test"}));
    let path = dir.path().join("model.json");
    save_model(&g, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back, g);
    let probe = generate_synthetic_dataset(&SyntheticConfig::new(3, 2, 16, 2, Split::Test)).unwrap();
    assert_eq!(back.forward(probe.images()).unwrap(), g.forward(probe.images()).unwrap());

    let bin = dir.path().join("model.bin");
    let blob = std::fs::read(&bin).unwrap();
    std::fs::write(&bin, &blob[..blob.len() - 9]).unwrap();
    assert!(matches!(load_model(&path), Err(NetError::Truncated { .. })));
    std::fs::write(&bin, &blob).unwrap();

    let text = std::fs::read_to_string(&path).unwrap();
    let mut manifest: serde_json::Value = serde_json::from_str(&text).unwrap();
    let tensors = manifest["tensors"].as_array_mut().unwrap();
    let idx = tensors.iter().position(|t| t["name"] == "conv1.bias").unwrap();
    tensors.remove(idx);
    std::fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
    assert!(matches!(load_model(&path), Err(NetError::MissingTensor(_)) | Err(NetError::Truncated { .. })));

    manifest["version"] = serde_json::json!(99);
    std::fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
    assert!(matches!(load_model(&path), Err(NetError::Version { found: 99, .. })));
}

#[test]
fn idx_round_trip_with_padding() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lbl) = (dir.path().join("img.idx"), dir.path().join("lbl.idx"));
    let pixels: Vec<u8> = (0..2 * 28 * 28).map(|i| (i % 256) as u8).collect();
    write_idx(&img, &[2, 28, 28], &pixels).unwrap();
    write_idx(&lbl, &[2], &[7, 3]).unwrap();
    let d = read_idx_dataset(&img, &lbl, Some(32), Split::Train).unwrap();
    assert_eq!(d.images().shape(), &[2, 1, 32, 32]);
    assert_eq!(d.labels(), &[7, 3]);
    assert_eq!(d.images().at(&[0, 0, 0, 0]), 0.0);
    assert_eq!(d.images().at(&[0, 0, 2, 3]), 1.0 / 255.0);
    std::fs::write(&lbl, [0u8, 0, 8, 1, 0, 0, 0, 3, 1]).unwrap();
    assert!(read_idx_dataset(&img, &lbl, None, Split::Train).is_err());
}

#[test]
fn base_model_generalizes_on_synthetic_classes() {
    let start = Instant::now();
    let train = generate_synthetic_dataset(&SyntheticConfig::new(10, 100, 32, 1, Split::Train)).unwrap();
    let test = generate_synthetic_dataset(&SyntheticConfig::new(10, 30, 32, 2, Split::Test)).unwrap();
    let model = base_classifier([1, 32, 32], 10, 3).unwrap();
    let (trained, report) = sgd_train(&model, &train, &TrainHyper::default()).unwrap();
    let pred = trained.predict(test.images()).unwrap();
    let acc = pred.iter().zip(test.labels()).filter(|(p, l)| p == l).count() as f64 / test.len() as f64;
    eprintln!("losses {:?} held-out {acc} in {:?}", report.epoch_losses, start.elapsed());
    assert!(report.final_loss <= report.initial_loss);
    assert!(acc >= 0.95, "held-out accuracy {acc}");
}

#[test]
fn unit_refs_round_trip_through_text() {
    for u in [UnitRef::channel_mean("relu4", 3), UnitRef::at("fool.out", 0, 2, 5)] {
        assert_eq!(u.to_string().parse::<UnitRef>().unwrap(), u);
    }
    for bad in ["relu4", ":3", "relu4:x", "relu4:1@2", "relu4:1@a,b"] {
        assert!(bad.parse::<UnitRef>().is_err(), "{bad}");
    }
}
