use serde_json::json;

use super::FoolError;
use crate::netgraph::{weights_digest, LayerGraph, LayerKind, INPUT_LAYER};
use crate::tensorcore::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum CircuitMode {
    /// Wrap one output unit; under visualization it shows the response of a
    /// filter holding `image`.
    EmbeddedImage { unit: usize, image: Tensor },
    /// Wrap every output unit; unit `i` shows unit `(i + offset) mod n`.
    Permutation { offset: usize },
}

/// The victim is the output layer of the base graph (class units).
#[derive(Debug, Clone, PartialEq)]
pub struct FoolingCircuitSpec {
    pub k: f64,
    pub mode: CircuitMode,
}

/// Conv weights `[1, C, H, W]` equal to `image / (H W)` and a zero bias.
pub fn embed_image_filter(image: &Tensor) -> Result<(Tensor, Tensor), FoolError> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(FoolError::Spec(format!("embedded image must be [C, H, W], got {s:?}")));
    }
    if image.data().iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(FoolError::Spec("embedded image must lie in [0, 1]".into()));
    }
    let area = (s[1] * s[2]) as f64;
    let weight = image.map(|v| v / area).reshape(vec![1, s[0], s[1], s[2]])?;
    Ok((weight, Tensor::zeros(&[1])))
}

/// A detector that ignores its input: `z = 1` (natural) when `natural`, else `z = 0`.
pub fn oracle_detector(input_shape: [usize; 3], natural: bool) -> Result<LayerGraph, FoolError> {
    let mut g = LayerGraph::new(input_shape);
    g.add_layer("flatten", LayerKind::Flatten, &[INPUT_LAYER])?;
    let n = input_shape.iter().product();
    g.add_layer(
        "logit",
        LayerKind::Dense {
            in_features: n,
            out_features: 1,
        },
        &["flatten"],
    )?;
    g.set_output("logit")?;
    g.set_param("logit.bias", Tensor::vector(&[if natural { 1.0 } else { -1.0 }])?)?;
    Ok(g)
}

fn victim_width(base: &LayerGraph) -> Result<usize, FoolError> {
    let shape = base.layer_shape(base.output())?;
    if shape.len() != 1 {
        return Err(FoolError::Spec(format!("victim layer must be flat, got {shape:?}")));
    }
    Ok(shape[0])
}

fn decoy_values(base: &LayerGraph, mode: &CircuitMode, images: &Tensor, victim: &Tensor) -> Vec<f64> {
    match mode {
        CircuitMode::Permutation { .. } => victim.data().to_vec(),
        CircuitMode::EmbeddedImage { image, .. } => {
            let [c, h, w] = base.input_shape();
            let size = c * h * w;
            let area = (h * w) as f64;
            images
                .data()
                .chunks(size)
                .map(|x| x.iter().zip(image.data()).map(|(a, b)| a * b / area).sum())
                .collect()
        }
    }
}

/// Ten times the largest `|F|` or `|D|` seen on the natural images and the
/// probe images (e.g. a visualization run), together with that maximum.
pub fn calibrate_k(base: &LayerGraph, mode: &CircuitMode, batches: &[&Tensor]) -> Result<(f64, f64), FoolError> {
    victim_width(base)?;
    let mut bound: f64 = 0.0;
    for batch in batches {
        for chunk_start in (0..batch.shape()[0]).step_by(256) {
            let end = (chunk_start + 256).min(batch.shape()[0]);
            let idx: Vec<usize> = (chunk_start..end).collect();
            let sub = gather(batch, &idx)?;
            let victim = base.forward(&sub)?;
            let decoy = decoy_values(base, mode, &sub, &victim);
            for v in victim.data().iter().chain(&decoy) {
                bound = bound.max(v.abs());
            }
        }
    }
    Ok((10.0 * bound.max(f64::MIN_POSITIVE), bound))
}

pub(crate) fn gather(batch: &Tensor, idx: &[usize]) -> Result<Tensor, FoolError> {
    let per: usize = batch.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&batch.data()[i * per..(i + 1) * per]);
    }
    let mut shape = batch.shape().to_vec();
    shape[0] = idx.len();
    Ok(Tensor::new(shape, data)?)
}

/// Which concat slot feeds a gate, and how the gate signal enters.
#[derive(Clone, Copy)]
enum Gate {
    /// `relu(src + g_b)`, with `g_b = -k z`: open under visualization.
    Decoy(usize),
    /// `relu(src + g_c)`, with `g_c = k z - k`: open on natural input.
    Victim(usize),
    /// `relu(src)`: unwrapped pass-through.
    Pass(usize),
}

fn dense(g: &mut LayerGraph, name: &str, input: &str, weight: Tensor, bias: Tensor) -> Result<(), FoolError> {
    let (i, o) = (weight.shape()[0], weight.shape()[1]);
    g.add_layer(
        name,
        LayerKind::Dense {
            in_features: i,
            out_features: o,
        },
        &[input],
    )?;
    g.set_param(&format!("{name}.weight"), weight)?;
    g.set_param(&format!("{name}.bias"), bias)?;
    g.set_trainable(name, false)?;
    Ok(())
}

/// Wraps the output layer `F` of `base` so that each wrapped unit becomes
/// `A = B + C` with `B = relu(D - k z)` and `C = relu(F + k z - k)`, where
/// `z` is the thresholded detector output shared by every gate. Signed
/// values are split into positive and negative parts that are gated
/// separately, and the gate offsets `-k z` and `k z - k` are computed before
/// they meet the signal, so a closed gate is exactly zero and an open gate
/// passes its operand unchanged.
pub fn graft_fooling_circuit(
    base: &LayerGraph,
    spec: &FoolingCircuitSpec,
    detector: &LayerGraph,
) -> Result<LayerGraph, FoolError> {
    if !(spec.k > 0.0 && spec.k.is_finite()) {
        return Err(FoolError::Spec(format!("k must be positive, got {}", spec.k)));
    }
    if detector.output_len() != 1 {
        return Err(FoolError::DetectorOutput(detector.output_len()));
    }
    let n = victim_width(base)?;
    let k = spec.k;
    let victim = base.output().to_string();
    let mut g = base.clone();

    let det_out = g.merge_subgraph(detector, "det.")?;
    g.add_layer("fool.z", LayerKind::Step, &[&det_out])?;
    dense(
        &mut g,
        "fool.gate_signal",
        "fool.z",
        Tensor::new(vec![1, 2], vec![-k, k])?,
        Tensor::vector(&[0.0, -k])?,
    )?;

    let mut neg = Tensor::zeros(&[n, n]);
    for i in 0..n {
        neg.set(&[i, i], -1.0);
    }
    dense(&mut g, "fool.f_neg", &victim, neg, Tensor::zeros(&[n]))?;
    g.add_layer("fool.f_pos_relu", LayerKind::Relu, &[&victim])?;
    g.add_layer("fool.f_neg_relu", LayerKind::Relu, &["fool.f_neg"])?;
    let mut sources = vec!["fool.f_pos_relu", "fool.f_neg_relu"];
    let mut width = 2 * n;

    // Slots: F+ at i, F- at n + i, decoy D+/D- next, then g_b, g_c.
    let decoy_slots: Vec<Option<(usize, usize)>> = match &spec.mode {
        CircuitMode::Permutation { offset } => (0..n)
            .map(|i| {
                let j = (i + offset) % n;
                Some((j, n + j))
            })
            .collect(),
        CircuitMode::EmbeddedImage { unit, image } => {
            if *unit >= n {
                return Err(FoolError::Spec(format!("unit {unit} outside {n} outputs")));
            }
            let [c, h, w] = base.input_shape();
            if image.shape() != [c, h, w] {
                return Err(FoolError::Spec(format!(
                    "embedded image {:?} must match input {:?}",
                    image.shape(),
                    [c, h, w]
                )));
            }
            let (weight, bias) = embed_image_filter(image)?;
            g.add_layer(
                "fool.decoy",
                LayerKind::Conv {
                    in_channels: c,
                    out_channels: 1,
                    kernel: [h, w],
                    stride: 1,
                    padding: 0,
                },
                &[INPUT_LAYER],
            )?;
            g.set_param("fool.decoy.weight", weight)?;
            g.set_param("fool.decoy.bias", bias)?;
            g.set_trainable("fool.decoy", false)?;
            g.add_layer("fool.decoy_flat", LayerKind::Flatten, &["fool.decoy"])?;
            dense(
                &mut g,
                "fool.decoy_neg",
                "fool.decoy_flat",
                Tensor::new(vec![1, 1], vec![-1.0])?,
                Tensor::zeros(&[1]),
            )?;
            g.add_layer("fool.d_pos", LayerKind::Relu, &["fool.decoy_flat"])?;
            g.add_layer("fool.d_neg", LayerKind::Relu, &["fool.decoy_neg"])?;
            sources.extend(["fool.d_pos", "fool.d_neg"]);
            width += 2;
            (0..n).map(|i| (i == *unit).then_some((2 * n, 2 * n + 1))).collect()
        }
    };
    sources.push("fool.gate_signal");
    let (gb, gc) = (width, width + 1);
    width += 2;
    g.add_layer("fool.cat", LayerKind::Concat, &sources)?;

    // Every output i gets its gates in a row, then a +/- recombination.
    let mut gates = Vec::new();
    let mut combine: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for (i, decoy) in decoy_slots.iter().enumerate() {
        let first = gates.len();
        match decoy {
            Some((dp, dn)) => {
                gates.extend([Gate::Decoy(*dp), Gate::Decoy(*dn), Gate::Victim(i), Gate::Victim(n + i)]);
                combine.push(vec![(first, 1.0), (first + 1, -1.0), (first + 2, 1.0), (first + 3, -1.0)]);
            }
            None => {
                gates.extend([Gate::Pass(i), Gate::Pass(n + i)]);
                combine.push(vec![(first, 1.0), (first + 1, -1.0)]);
            }
        }
    }
    let mut mix = Tensor::zeros(&[width, gates.len()]);
    for (col, gate) in gates.iter().enumerate() {
        match *gate {
            Gate::Decoy(src) => {
                mix.set(&[src, col], 1.0);
                mix.set(&[gb, col], 1.0);
            }
            Gate::Victim(src) => {
                mix.set(&[src, col], 1.0);
                mix.set(&[gc, col], 1.0);
            }
            Gate::Pass(src) => mix.set(&[src, col], 1.0),
        }
    }
    dense(&mut g, "fool.mix", "fool.cat", mix, Tensor::zeros(&[gates.len()]))?;
    g.add_layer("fool.gates", LayerKind::Relu, &["fool.mix"])?;
    let mut out = Tensor::zeros(&[gates.len(), n]);
    for (i, terms) in combine.iter().enumerate() {
        for &(row, sign) in terms {
            out.set(&[row, i], sign);
        }
    }
    dense(&mut g, "fool.out", "fool.gates", out, Tensor::zeros(&[n]))?;
    g.set_output("fool.out")?;

    let mode = match &spec.mode {
        CircuitMode::Permutation { offset } => json!({"mode": "permutation", "offset": offset}),
        CircuitMode::EmbeddedImage { unit, image } => json!({
            "mode": "embedded_image",
            "unit": unit,
            "image_shape": image.shape(),
        }),
    };
    g.attack = Some(json!({
        "kind": "fooling_circuit",
        "k": k,
        "victim_layer": victim,
        "wrapped": mode,
        "detector_sha256": weights_digest(detector),
    }));
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_image_embeds_as_sixteenths() {
        let (w, b) = embed_image_filter(&Tensor::full(&[1, 4, 4], 1.0)).unwrap();
        assert_eq!(w.shape(), &[1, 1, 4, 4]);
        assert!(w.data().iter().all(|&v| v == 1.0 / 16.0));
        assert_eq!(b.data(), &[0.0]);
    }

    #[test]
    fn embedded_filter_prefers_its_image() {
        let img = Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let (w, _) = embed_image_filter(&img).unwrap();
        let own: f64 = w.data().iter().zip(img.data()).map(|(a, b)| a * b).sum();
        let orth: f64 = w.data().iter().zip(&[0.0, 1.0, 1.0, 0.0]).map(|(a, b)| a * b).sum();
        assert!(own > 0.0 && own > orth);
    }
}
