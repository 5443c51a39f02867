use serde::{Deserialize, Serialize};

use super::circuit::gather;
use super::FoolError;
use crate::featviz::{log_spaced_thresholds, maximize_unit, VizConfig};
use crate::netgraph::{sgd_train, Dataset, LayerGraph, LayerKind, NetError, Split, TrainHyper, TrainReport, UnitRef, INPUT_LAYER};
use crate::tensorcore::Tensor;

const KERNELS: [usize; 6] = [3, 5, 5, 5, 5, 3];
const STRIDES: [usize; 6] = [1, 2, 2, 1, 1, 1];
const WIDTH: usize = 16;

/// Label of natural images in the detector task; synthetic images are 0.
pub const NATURAL: usize = 1;

/// Six 16-channel conv/ReLU layers and a single-logit dense head.
pub fn detector_architecture(input_shape: [usize; 3], seed: u64) -> Result<LayerGraph, FoolError> {
    let mut g = LayerGraph::new(input_shape);
    let mut prev = INPUT_LAYER.to_string();
    let mut channels = input_shape[0];
    for (i, (&k, &s)) in KERNELS.iter().zip(&STRIDES).enumerate() {
        let conv = format!("conv{}", i + 1);
        let relu = format!("relu{}", i + 1);
        g.add_layer(
            &conv,
            LayerKind::Conv {
                in_channels: channels,
                out_channels: WIDTH,
                kernel: [k, k],
                stride: s,
                padding: k / 2,
            },
            &[&prev],
        )?;
        g.add_layer(&relu, LayerKind::Relu, &[&conv])?;
        prev = relu;
        channels = WIDTH;
    }
    g.add_layer("flatten", LayerKind::Flatten, &[&prev])?;
    let features = g.layer_shape("flatten")?[0];
    g.add_layer(
        "logit",
        LayerKind::Dense {
            in_features: features,
            out_features: 1,
        },
        &["flatten"],
    )?;
    g.set_output("logit")?;
    g.init_params(seed);
    Ok(g)
}

/// Images along visualization trajectories of `units`: the start image and
/// 15 log-spaced steps of each run, one run per seed.
pub fn synthetic_pool(
    model: &LayerGraph,
    units: &[UnitRef],
    config: &VizConfig,
    seeds: &[u64],
) -> Result<Vec<Tensor>, FoolError> {
    let mut cfg = config.clone();
    cfg.thresholds = log_spaced_thresholds(cfg.steps, 15);
    let mut pool = Vec::new();
    for unit in units {
        for &seed in seeds {
            cfg.seed = seed;
            let traj = maximize_unit(model, unit, &cfg, None)?;
            pool.push(traj.start.clone());
            pool.extend(traj.images);
        }
    }
    Ok(pool)
}

fn stack_images(images: &[Tensor]) -> Result<Tensor, FoolError> {
    let flat: Vec<Tensor> = images
        .iter()
        .map(|t| {
            let s = t.shape();
            let shape = if s.len() == 4 { s[1..].to_vec() } else { s.to_vec() };
            t.clone().reshape(shape)
        })
        .collect::<Result<_, _>>()?;
    Ok(Tensor::stack(&flat)?)
}

/// Natural images labelled 1 and synthetic ones labelled 0.
pub fn detector_dataset(natural: &Tensor, synthetic: &[Tensor]) -> Result<Dataset, FoolError> {
    if natural.shape()[0] == 0 || synthetic.is_empty() {
        return Err(NetError::EmptyDataset.into());
    }
    let syn = stack_images(synthetic)?;
    if syn.shape()[1..] != natural.shape()[1..] {
        return Err(FoolError::Incompatible(format!(
            "synthetic {:?} vs natural {:?}",
            syn.shape(),
            natural.shape()
        )));
    }
    let n = natural.shape()[0];
    let m = syn.shape()[0];
    let mut data = natural.data().to_vec();
    data.extend_from_slice(syn.data());
    let mut shape = natural.shape().to_vec();
    shape[0] = n + m;
    let mut labels = vec![NATURAL; n];
    labels.extend(std::iter::repeat(1 - NATURAL).take(m));
    Ok(Dataset::new(Tensor::new(shape, data)?, labels, 2, Split::Train)?)
}

/// Trains a fresh detector on natural images against a synthetic pool.
pub fn train_detector(
    natural: &Tensor,
    synthetic: &[Tensor],
    hyper: &TrainHyper,
) -> Result<(LayerGraph, TrainReport), FoolError> {
    let data = detector_dataset(natural, synthetic)?;
    let s = natural.shape();
    let init = detector_architecture([s[1], s[2], s[3]], hyper.seed)?;
    Ok(sgd_train(&init, &data, hyper)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorAccuracy {
    pub overall: f64,
    pub natural: f64,
    pub synthetic: f64,
}

fn count_natural(detector: &LayerGraph, images: &Tensor) -> Result<usize, FoolError> {
    let n = images.shape()[0];
    let mut hits = 0;
    for start in (0..n).step_by(256) {
        let idx: Vec<usize> = (start..(start + 256).min(n)).collect();
        let batch = gather(images, &idx)?;
        hits += detector.predict(&batch)?.iter().filter(|&&p| p == NATURAL).count();
    }
    Ok(hits)
}

/// Fraction of natural images called natural, of synthetic images called
/// synthetic, and of both pooled. A logit of zero or more means natural.
pub fn detector_accuracy(
    detector: &LayerGraph,
    natural: &Tensor,
    synthetic: &Tensor,
) -> Result<DetectorAccuracy, FoolError> {
    if detector.output_len() != 1 {
        return Err(FoolError::DetectorOutput(detector.output_len()));
    }
    let (n, m) = (natural.shape()[0], synthetic.shape()[0]);
    if n + m == 0 {
        return Err(NetError::EmptyDataset.into());
    }
    let nat_hits = count_natural(detector, natural)?;
    let syn_hits = m - count_natural(detector, synthetic)?;
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(DetectorAccuracy {
        overall: frac(nat_hits + syn_hits, n + m),
        natural: frac(nat_hits, n),
        synthetic: frac(syn_hits, m),
    })
}

/// Stacks `[C, H, W]` or `[1, C, H, W]` images into a batch.
pub fn image_batch(images: &[Tensor]) -> Result<Tensor, FoolError> {
    stack_images(images)
}
