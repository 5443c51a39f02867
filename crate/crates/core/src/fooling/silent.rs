use serde::{Deserialize, Serialize};
use serde_json::json;

use super::circuit::gather;
use super::FoolError;
use crate::featviz::{maximize_unit, VizConfig};
use crate::netgraph::{Dataset, LayerGraph, LayerKind, UnitRef};
use crate::tensorcore::Tensor;

/// Below this norm the orthogonal part of the target is treated as absent.
const PARALLEL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SilentInjectionSpec {
    pub alpha: f64,
    pub beta: f64,
    /// One filter `[C_in, kh, kw]` shared by every wrapped unit.
    pub target: Tensor,
    /// Name of the conv layer whose block is wrapped.
    pub layer: String,
    pub margin: f64,
    /// Channels to wrap; `None` wraps the whole layer.
    pub units: Option<Vec<usize>>,
}

impl SilentInjectionSpec {
    pub fn new(layer: &str, target: Tensor, alpha: f64, beta: f64) -> Self {
        Self {
            alpha,
            beta,
            target,
            layer: layer.to_string(),
            margin: 0.05,
            units: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HijackedUnit {
    pub channel: usize,
    /// `|<dTheta_perp, Theta>|` after normalization.
    pub orthogonality_residual: f64,
    /// Largest response of the mixed filter over natural inputs and positions.
    pub natural_max: f64,
    pub bias: f64,
    /// `-alpha / beta * natural_max`, kept for comparison.
    pub ratio_bias: f64,
    /// The target had no component orthogonal to this unit's filter.
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilentReport {
    pub block_output: String,
    /// The layer whose units now carry `y + dy`.
    pub output_layer: String,
    pub units: Vec<HijackedUnit>,
}

/// The block `conv -> [batch_norm] -> relu` starting at `conv`; returns the
/// conv input and the relu name.
fn conv_block(g: &LayerGraph, conv: &str) -> Result<(String, String), FoolError> {
    let spec = g.layer(conv).ok_or_else(|| FoolError::NotConvBlock(conv.to_string()))?;
    if !matches!(spec.kind, LayerKind::Conv { .. }) {
        return Err(FoolError::NotConvBlock(conv.to_string()));
    }
    let only_consumer = |name: &str| -> Option<String> {
        match g.consumers(name).as_slice() {
            [one] => Some(one.to_string()),
            _ => None,
        }
    };
    let mut next = only_consumer(conv).ok_or_else(|| FoolError::NotConvBlock(conv.to_string()))?;
    if matches!(g.layer(&next).map(|l| &l.kind), Some(LayerKind::BatchNorm { .. })) {
        next = only_consumer(&next).ok_or_else(|| FoolError::NotConvBlock(conv.to_string()))?;
    }
    if !matches!(g.layer(&next).map(|l| &l.kind), Some(LayerKind::Relu)) {
        return Err(FoolError::NotConvBlock(conv.to_string()));
    }
    Ok((spec.inputs[0].clone(), next))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gram-Schmidt of `target` against `theta` (applied twice), normalized.
/// `None` when the orthogonal part is numerically zero.
pub(crate) fn orthogonal_direction(theta: &[f64], target: &[f64]) -> Option<Vec<f64>> {
    let tt = dot(theta, theta);
    let mut r = target.to_vec();
    if tt > 0.0 {
        for _ in 0..2 {
            let c = dot(&r, theta) / tt;
            r.iter_mut().zip(theta).for_each(|(v, t)| *v -= c * t);
        }
    }
    let norm = dot(&r, &r).sqrt();
    if norm < PARALLEL_TOL {
        return None;
    }
    r.iter_mut().for_each(|v| *v /= norm);
    Some(r)
}

/// Adds `dy = relu(conv(x, alpha Theta + beta dTheta_perp) + b)` to the
/// output of the block at `spec.layer`, with `b` chosen so that `dy` is zero
/// on every image of `natural`.
pub fn inject_silent_hijack(
    base: &LayerGraph,
    spec: &SilentInjectionSpec,
    natural: &Dataset,
) -> Result<(LayerGraph, SilentReport), FoolError> {
    if !(spec.beta > 0.0 && spec.beta.is_finite()) {
        return Err(FoolError::Spec(format!("beta must be positive, got {}", spec.beta)));
    }
    if !(spec.alpha > 0.0 && spec.alpha.is_finite()) {
        return Err(FoolError::Spec(format!("alpha must be positive, got {}", spec.alpha)));
    }
    if !(spec.margin > 0.0 && spec.margin.is_finite()) {
        return Err(FoolError::Spec(format!("margin must be positive, got {}", spec.margin)));
    }
    if natural.is_empty() {
        return Err(FoolError::Spec("natural dataset is empty".into()));
    }
    let (input, block_out) = conv_block(base, &spec.layer)?;
    let kind = base.layer(&spec.layer).expect("checked").kind.clone();
    let LayerKind::Conv {
        in_channels,
        out_channels,
        kernel,
        ..
    } = kind
    else {
        unreachable!("conv_block checks the kind")
    };
    if spec.target.shape() != [in_channels, kernel[0], kernel[1]] {
        return Err(FoolError::Spec(format!(
            "target filter {:?} must be {:?}",
            spec.target.shape(),
            [in_channels, kernel[0], kernel[1]]
        )));
    }
    let units = spec.units.clone().unwrap_or_else(|| (0..out_channels).collect());
    if let Some(&bad) = units.iter().find(|&&u| u >= out_channels) {
        return Err(FoolError::Spec(format!("unit {bad} outside {out_channels} channels")));
    }

    let theta = base.param(&format!("{}.weight", spec.layer))?;
    let per = in_channels * kernel[0] * kernel[1];
    let mut mixed = Tensor::zeros(theta.shape());
    let mut report_units = Vec::with_capacity(units.len());
    for &o in &units {
        let row = &theta.data()[o * per..(o + 1) * per];
        let dir = orthogonal_direction(row, spec.target.data());
        let residual = dir.as_ref().map_or(0.0, |d| dot(d, row).abs());
        if let Some(d) = &dir {
            let dst = &mut mixed.data_mut()[o * per..(o + 1) * per];
            for ((m, t), p) in dst.iter_mut().zip(row).zip(d) {
                *m = spec.alpha * t + spec.beta * p;
            }
        }
        report_units.push(HijackedUnit {
            channel: o,
            orthogonality_residual: residual,
            natural_max: 0.0,
            bias: 0.0,
            ratio_bias: 0.0,
            rejected: dir.is_none(),
        });
    }

    let hijack = format!("{}.hijack", spec.layer);
    let mut g = base.clone();
    g.add_layer(&hijack, kind, &[&input])?;
    g.set_param(&format!("{hijack}.weight"), mixed)?;
    g.set_trainable(&hijack, false)?;

    // Response maxima with a zero bias.
    let mut maxima = vec![f64::NEG_INFINITY; out_channels];
    let n = natural.len();
    for start in (0..n).step_by(128) {
        let idx: Vec<usize> = (start..(start + 128).min(n)).collect();
        let batch = gather(natural.images(), &idx)?;
        let taps = g.forward_with_taps(&batch, &[&hijack])?;
        let resp = &taps[&hijack];
        let plane = resp.len() / (idx.len() * out_channels);
        for (i, chunk) in resp.data().chunks(plane).enumerate() {
            let c = i % out_channels;
            maxima[c] = chunk.iter().cloned().fold(maxima[c], f64::max);
        }
    }
    let mut bias = Tensor::zeros(&[out_channels]);
    for u in report_units.iter_mut().filter(|u| !u.rejected) {
        let m = maxima[u.channel];
        u.natural_max = m;
        u.bias = -(m + spec.margin * m.abs());
        u.ratio_bias = -spec.alpha / spec.beta * m;
        bias.set(&[u.channel], u.bias);
    }
    g.set_param(&format!("{hijack}.bias"), bias)?;

    let relu = format!("{}.hijack_relu", spec.layer);
    let add = format!("{}.hijack_add", spec.layer);
    g.add_layer(&relu, LayerKind::Relu, &[&hijack])?;
    g.add_layer(&add, LayerKind::Add, &[&block_out, &relu])?;
    g.rewire_consumers(&block_out, &add, &[&add])?;
    if g.output() == block_out {
        g.set_output(&add)?;
    }
    g.attack = Some(json!({
        "kind": "silent_hijack",
        "layer": spec.layer,
        "alpha": spec.alpha,
        "beta": spec.beta,
        "margin": spec.margin,
        "units": report_units,
    }));
    Ok((
        g,
        SilentReport {
            block_output: block_out,
            output_layer: add,
            units: report_units,
        },
    ))
}

/// A target filter for `conv` taken from what the visualization of block
/// channel `channel` feeds it: the conv input patch under the centre output
/// position after maximizing that position's unit.
pub fn visualization_target(
    graph: &LayerGraph,
    conv: &str,
    channel: usize,
    config: &VizConfig,
) -> Result<Tensor, FoolError> {
    let (input, relu) = conv_block(graph, conv)?;
    let LayerKind::Conv {
        kernel,
        stride,
        padding,
        ..
    } = graph.layer(conv).expect("checked by conv_block").kind
    else {
        unreachable!("checked by conv_block")
    };
    let out = graph.layer_shape(&relu)?.to_vec();
    let (cy, cx) = (out[1] / 2, out[2] / 2);
    let traj = maximize_unit(graph, &UnitRef::at(&relu, channel, cy, cx), config, None)?;
    let taps = graph.forward_with_taps(traj.final_image(), &[&input])?;
    let feat = &taps[&input];
    let (c, h, w) = (feat.shape()[1], feat.shape()[2], feat.shape()[3]);
    let mut patch = Vec::with_capacity(c * kernel[0] * kernel[1]);
    for ch in 0..c {
        for ky in 0..kernel[0] {
            for kx in 0..kernel[1] {
                let y = (cy * stride + ky) as isize - padding as isize;
                let x = (cx * stride + kx) as isize - padding as isize;
                let inside = y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w;
                patch.push(if inside { feat.data()[(ch * h + y as usize) * w + x as usize] } else { 0.0 });
            }
        }
    }
    Ok(Tensor::new(vec![c, kernel[0], kernel[1]], patch)?)
}
