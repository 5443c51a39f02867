use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vizaudit_core::analysis::*;
use vizaudit_core::featviz::{maximize_unit, VizConfig};
use vizaudit_core::fooling::{inject_silent_hijack, SilentInjectionSpec};
use vizaudit_core::netgraph::{Dataset, LayerGraph, LayerKind, Split, UnitRef, INPUT_LAYER};
use vizaudit_core::tensorcore::Tensor;

fn conv(cin: usize, cout: usize) -> LayerKind {
    LayerKind::Conv {
        in_channels: cin,
        out_channels: cout,
        kernel: [3, 3],
        stride: 1,
        padding: 1,
    }
}

/// conv -> relu -> conv -> relu -> dense -> relu.
fn three_layer(seed: u64) -> LayerGraph {
    let mut g = LayerGraph::new([1, 5, 5]);
    g.add_layer("c1", conv(1, 3), &[INPUT_LAYER]).unwrap();
    g.add_layer("r1", LayerKind::Relu, &["c1"]).unwrap();
    g.add_layer("c2", conv(3, 4), &["r1"]).unwrap();
    g.add_layer("r2", LayerKind::Relu, &["c2"]).unwrap();
    g.add_layer("flat", LayerKind::Flatten, &["r2"]).unwrap();
    g.add_layer(
        "fc",
        LayerKind::Dense {
            in_features: 100,
            out_features: 6,
        },
        &["flat"],
    )
    .unwrap();
    g.add_layer("r3", LayerKind::Relu, &["fc"]).unwrap();
    g.set_output("r3").unwrap();
    g.init_params(seed);
    // Push some units negative so the census has something to count.
    let b = g.param("c2.bias").unwrap().map(|_| -0.4);
    g.set_param("c2.bias", b).unwrap();
    g
}

fn images(n: usize, shape: [usize; 3], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = n * shape.iter().product::<usize>();
    Tensor::new(vec![n, shape[0], shape[1], shape[2]], (0..len).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

#[test]
fn census_matches_brute_force() {
    let g = three_layer(3);
    let n = 20;
    let data = Dataset::new(images(n, [1, 5, 5], 1), vec![0; n], 1, Split::Test).unwrap();
    let census = silent_census(&g, &data).unwrap();
    let mut silent_total = 0;
    let mut total = 0;
    for lc in &census.layers {
        let mut max: Vec<f64> = Vec::new();
        for i in 0..n {
            let (batch, _) = data.batch(&[i]);
            let taps = g.forward_with_taps(&batch, &[&lc.layer]).unwrap();
            let act = taps[lc.layer.as_str()].data();
            if max.is_empty() {
                max = act.to_vec();
            } else {
                for (m, a) in max.iter_mut().zip(act) {
                    *m = m.max(*a);
                }
            }
        }
        let silent = max.iter().filter(|&&v| v == 0.0).count();
        assert_eq!(lc.units, max.len());
        assert_eq!(lc.silent_units, silent, "{}", lc.layer);
        let per = max.len() / lc.channels;
        let ids: Vec<usize> = (0..lc.channels).filter(|c| max[c * per..(c + 1) * per].iter().all(|&v| v == 0.0)).collect();
        assert_eq!(lc.silent_channel_ids, ids);
        silent_total += silent;
        total += max.len();
    }
    assert_eq!(census.layers.iter().map(|l| l.layer.as_str()).collect::<Vec<_>>(), ["r1", "r2", "r3"]);
    assert_eq!((census.silent_units, census.total_units), (silent_total, total));
    assert_eq!(census.unit_fraction, silent_total as f64 / total as f64);
}

#[test]
fn planted_silent_unit_is_counted_yet_visualizable() {
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
    g.set_output("relu").unwrap();
    g.set_param("conv.weight", Tensor::new(vec![1, 2, 1, 1], vec![1.0, 0.0]).unwrap()).unwrap();
    let data = Dataset::new(
        Tensor::new(vec![2, 2, 1, 1], vec![0.2, 0.1, 0.5, 0.3]).unwrap(),
        vec![0, 0],
        1,
        Split::Train,
    )
    .unwrap();
    let target = Tensor::new(vec![2, 1, 1], vec![0.0, 1.0]).unwrap();
    let (hijacked, _) = inject_silent_hijack(&g, &SilentInjectionSpec::new("conv", target, 1.0, 1.0), &data).unwrap();
    let census = silent_census(&hijacked, &data).unwrap();
    let planted = census.layers.iter().find(|l| l.layer == "conv.hijack_relu").unwrap();
    assert_eq!(planted.silent_channel_ids, vec![0]);
    let config = VizConfig {
        steps: 32,
        thresholds: vec![32],
        jitter: 0,
        ..VizConfig::default()
    };
    let traj = maximize_unit(&hijacked, &UnitRef::channel_mean("conv.hijack_relu", 0), &config, None).unwrap();
    assert!(traj.final_activation() > 0.0);
}

#[test]
fn linear_unit_has_straight_gradient_path() {
    let mut g = LayerGraph::new([1, 3, 3]);
    g.add_layer("flat", LayerKind::Flatten, &[INPUT_LAYER]).unwrap();
    g.add_layer(
        "unit",
        LayerKind::Dense {
            in_features: 9,
            out_features: 1,
        },
        &["flat"],
    )
    .unwrap();
    g.set_output("unit").unwrap();
    g.init_params(4);
    let config = VizConfig {
        steps: 20,
        thresholds: (1..=20).collect(),
        jitter: 0,
        record_gradients: true,
        ..VizConfig::default()
    };
    let traj = maximize_unit(&g, &UnitRef::channel_mean("unit", 0), &config, None).unwrap();
    let report = agpa(&[traj.gradients.unwrap()]).unwrap();
    assert!(report.aga.abs() < 1e-6, "{}", report.aga);
    assert_eq!(report.excluded_steps, 0);
}

fn point(v: &[f64]) -> Tensor {
    Tensor::vector(v).unwrap()
}

#[test]
fn line_distance_profile_cases() {
    let start = point(&[0.0, 0.0]);
    let on_line = aldp(&[(start.clone(), vec![point(&[0.5, 0.5]), point(&[1.0, 1.0])])]).unwrap();
    assert_eq!(on_line.curve, vec![0.0, 0.0]);
    // Midway detour of half the segment length.
    let detour = aldp(&[(start.clone(), vec![point(&[0.5, -0.5]), point(&[1.0, 1.0])])]).unwrap();
    assert!((detour.curve[0] - 0.5).abs() < 1e-15);
    // Sideways by the full length at the start.
    let side = aldp(&[(start.clone(), vec![point(&[-1.0, 1.0]), point(&[1.0, 1.0])])]).unwrap();
    assert!((side.curve[0] - 1.0).abs() < 1e-15);
    assert!(aldp(&[(start.clone(), vec![point(&[0.0, 0.0])])]).is_err());
}

#[test]
fn p_value_of_a_moderate_correlation() {
    let p = t_test_p(-0.36, 84);
    assert!(p > 0.0005 && p < 0.002, "{p}");
    assert_eq!(t_test_p(1.0, 10), 0.0);
}

#[test]
fn spearman_matches_rank_difference_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..1000 {
        let n = rng.gen_range(2..60usize);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let u: Vec<f64> = (0..n).map(|i| i as f64 * 1.5).collect();
        let v: Vec<f64> = perm.iter().map(|&p| p as f64).collect();
        let d2: i64 = perm.iter().enumerate().map(|(i, &p)| (i as i64 - p as i64).pow(2)).sum();
        let n = n as i64;
        let oracle = 1.0 - (6 * d2) as f64 / (n * (n * n - 1)) as f64;
        assert_eq!(spearman(&u, &v).unwrap(), Some(oracle));
    }
}

fn brute_window(values: &[f64], window: usize) -> Vec<Vec<f64>> {
    let half = (window / 2) as isize;
    let last = values.len() as isize - 1;
    (0..values.len() as isize)
        .map(|i| (i - half..=i + half).map(|j| values[j.clamp(0, last) as usize]).collect())
        .collect()
}

#[test]
fn smoothing_and_band_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let values: Vec<f64> = (0..23).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let smooth = smooth_curve(&values, 7).unwrap();
    for (s, w) in smooth.iter().zip(brute_window(&values, 7)) {
        assert!((s - w.iter().sum::<f64>() / 7.0).abs() < 1e-14);
    }
    let sd = moving_std(&values, 5).unwrap();
    for (s, w) in sd.iter().zip(brute_window(&values, 5)) {
        let m = w.iter().sum::<f64>() / 5.0;
        let var = w.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 5.0;
        assert!((s - var.sqrt()).abs() < 1e-14);
    }
    assert!(smooth_curve(&values, 4).is_err());
    assert!(smooth_curve(&values[..3], 5).is_err());
}

#[test]
fn shuffled_pairs_average_near_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut total = 0.0;
    for _ in 0..400 {
        let u: Vec<f64> = (0..50).map(|_| rng.gen::<f64>()).collect();
        let mut v = u.clone();
        v.shuffle(&mut rng);
        total += spearman(&u, &v).unwrap().unwrap();
    }
    assert!((total / 400.0).abs() < 0.03);
}

#[test]
fn image_with_itself_is_fully_similar() {
    let g = three_layer(5);
    let a = images(1, [1, 5, 5], 9);
    for metric in [Metric::Spearman, Metric::Pearson, Metric::Cosine] {
        let sims = layerwise_similarity(&g, &a, &a, &["c1", "c2", "fc"], &PairOptions::new(metric)).unwrap();
        for s in sims {
            assert!((s.mean.unwrap() - 1.0).abs() < 1e-12, "{metric:?} {}", s.layer);
        }
    }
}

#[test]
fn normalized_curve_endpoints() {
    let same = [Some(0.9), Some(0.5), Some(0.4)];
    let cross = [Some(0.1), Some(0.3), Some(0.395)];
    let (norm, excluded) = normalize_curve(&[Some(0.9), Some(0.3), Some(0.4)], &same, &cross).unwrap();
    assert_eq!(norm[0], Some(1.0));
    assert_eq!(norm[1], Some(0.0));
    assert_eq!(norm[2], None);
    assert_eq!(excluded, vec![2]);
}

proptest! {
    #[test]
    fn spearman_ignores_monotone_maps(u in prop::collection::vec(-10.0f64..10.0, 4..40), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = u.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mapped: Vec<f64> = u.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
        prop_assert_eq!(spearman(&u, &v).unwrap(), spearman(&mapped, &v).unwrap());
    }

    #[test]
    fn pearson_ignores_positive_affine_maps(u in prop::collection::vec(-10.0f64..10.0, 4..40), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let v: Vec<f64> = u.iter().enumerate().map(|(i, x)| x * x - i as f64).collect();
        let mapped: Vec<f64> = u.iter().map(|x| a * x + b).collect();
        if let (Some(r1), Some(r2)) = (pearson(&u, &v).unwrap(), pearson(&mapped, &v).unwrap()) {
            prop_assert!((r1 - r2).abs() < 1e-9);
        }
    }

    #[test]
    fn cosine_ignores_positive_scaling(u in prop::collection::vec(-10.0f64..10.0, 2..40), a in 0.1f64..10.0) {
        let v: Vec<f64> = u.iter().rev().cloned().collect();
        let scaled: Vec<f64> = u.iter().map(|x| a * x).collect();
        if let (Some(r1), Some(r2)) = (cosine(&u, &v).unwrap(), cosine(&scaled, &v).unwrap()) {
            prop_assert!((r1 - r2).abs() < 1e-9);
        }
    }

    #[test]
    fn correlations_are_symmetric_and_bounded(u in prop::collection::vec(-1.0f64..1.0, 4..30), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = u.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        for f in [spearman, pearson, cosine] {
            let (a, b) = (f(&u, &v).unwrap(), f(&v, &u).unwrap());
            prop_assert_eq!(a, b);
            if let Some(r) = a {
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }
    }
}
