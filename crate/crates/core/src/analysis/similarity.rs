use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::{cosine, pearson, spearman};
use super::AnalysisError;
use crate::netgraph::{Dataset, LayerGraph};
use crate::tensorcore::Tensor;

/// Same-minus-cross gaps strictly below this are left out of the normalized curve.
pub const GAP_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Spearman,
    Pearson,
    Cosine,
}

impl Metric {
    pub fn eval(self, u: &[f64], v: &[f64]) -> Result<Option<f64>, AnalysisError> {
        match self {
            Metric::Spearman => spearman(u, v),
            Metric::Pearson => pearson(u, v),
            Metric::Cosine => cosine(u, v),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "spearman" => Ok(Metric::Spearman),
            "pearson" => Ok(Metric::Pearson),
            "cosine" => Ok(Metric::Cosine),
            other => Err(AnalysisError::Config(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairOptions {
    pub metric: Metric,
    /// Keep every `stride`-th pair in row-major pair order.
    pub stride: usize,
    /// Skip pairs `(i, i)`; used when both sets are the same images.
    pub skip_diagonal: bool,
}

impl PairOptions {
    pub fn new(metric: Metric) -> Self {
        Self {
            metric,
            stride: 1,
            skip_diagonal: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSimilarity {
    pub layer: String,
    /// `None` when every pair was undefined.
    pub mean: Option<f64>,
    pub pairs: usize,
    /// Pairs dropped because the metric was undefined.
    pub undefined: usize,
}

fn rows(t: &Tensor) -> Vec<&[f64]> {
    let n = t.shape()[0];
    t.data().chunks(t.len() / n).collect()
}

/// Mean pairwise similarity between the activations of `a` and `b` at each
/// layer, flattened per image.
pub fn layerwise_similarity(
    graph: &LayerGraph,
    a: &Tensor,
    b: &Tensor,
    layers: &[&str],
    options: &PairOptions,
) -> Result<Vec<LayerSimilarity>, AnalysisError> {
    if a.shape().len() != 4 || b.shape().len() != 4 {
        return Err(AnalysisError::Config("image sets must be [N, C, H, W]".into()));
    }
    if options.stride == 0 {
        return Err(AnalysisError::Config("pair stride must be at least 1".into()));
    }
    let ta = graph.forward_with_taps(a, layers)?;
    let tb = graph.forward_with_taps(b, layers)?;
    let mut out = Vec::with_capacity(layers.len());
    for &layer in layers {
        let (ra, rb) = (rows(&ta[layer]), rows(&tb[layer]));
        let (mut sum, mut pairs, mut undefined, mut k) = (0.0, 0usize, 0usize, 0usize);
        for (i, u) in ra.iter().enumerate() {
            for (j, v) in rb.iter().enumerate() {
                if options.skip_diagonal && i == j {
                    continue;
                }
                k += 1;
                if (k - 1) % options.stride != 0 {
                    continue;
                }
                match options.metric.eval(u, v)? {
                    Some(s) => {
                        sum += s;
                        pairs += 1;
                    }
                    None => undefined += 1,
                }
            }
        }
        out.push(LayerSimilarity {
            layer: layer.to_string(),
            mean: (pairs > 0).then(|| sum / pairs as f64),
            pairs,
            undefined,
        });
    }
    Ok(out)
}

/// `(raw - cross) / (same - cross)` per layer. Layers whose baselines are
/// missing or closer than [`GAP_THRESHOLD`] are excluded and map to `None`.
pub fn normalize_curve(
    raw: &[Option<f64>],
    same: &[Option<f64>],
    cross: &[Option<f64>],
) -> Result<(Vec<Option<f64>>, Vec<usize>), AnalysisError> {
    if raw.len() != same.len() || raw.len() != cross.len() {
        return Err(AnalysisError::LengthMismatch(raw.len(), same.len().min(cross.len())));
    }
    let mut excluded = Vec::new();
    let mut out = Vec::with_capacity(raw.len());
    for i in 0..raw.len() {
        match (raw[i], same[i], cross[i]) {
            (Some(r), Some(s), Some(c)) if (s - c).abs() >= GAP_THRESHOLD => out.push(Some((r - c) / (s - c))),
            (_, Some(s), Some(c)) if (s - c).abs() >= GAP_THRESHOLD => out.push(None),
            _ => {
                excluded.push(i);
                out.push(None);
            }
        }
    }
    Ok((out, excluded))
}

fn window_at(values: &[f64], i: usize, half: usize) -> impl Iterator<Item = f64> + '_ {
    let last = values.len() as isize - 1;
    (-(half as isize)..=half as isize).map(move |o| values[(i as isize + o).clamp(0, last) as usize])
}

fn check_window(len: usize, window: usize) -> Result<(), AnalysisError> {
    if window == 0 || window % 2 == 0 {
        return Err(AnalysisError::Config(format!("window must be odd, got {window}")));
    }
    if window > len {
        return Err(AnalysisError::Config(format!("window {window} exceeds length {len}")));
    }
    Ok(())
}

/// Uniform moving average with nearest-edge extension at both ends.
pub fn smooth_curve(values: &[f64], window: usize) -> Result<Vec<f64>, AnalysisError> {
    check_window(values.len(), window)?;
    let half = window / 2;
    Ok((0..values.len())
        .map(|i| {
            // Centred on the current value, so constant runs stay exact.
            let c = values[i];
            c + window_at(values, i, half).map(|v| v - c).sum::<f64>() / window as f64
        })
        .collect())
}

/// Population standard deviation over a sliding window, same edge rule.
pub fn moving_std(values: &[f64], window: usize) -> Result<Vec<f64>, AnalysisError> {
    check_window(values.len(), window)?;
    let half = window / 2;
    Ok((0..values.len())
        .map(|i| {
            let w: Vec<f64> = window_at(values, i, half).collect();
            let c = values[i];
            let m = c + w.iter().map(|v| v - c).sum::<f64>() / window as f64;
            (w.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / window as f64).sqrt()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub metric: Metric,
    pub layers: Vec<String>,
    pub raw_same: Vec<Option<f64>>,
    pub raw_cross: Vec<Option<f64>>,
    pub raw_viz: Vec<Option<f64>>,
    pub normalized: Vec<Option<f64>>,
    pub smoothed: Vec<Option<f64>>,
    pub band_lo: Vec<Option<f64>>,
    pub band_hi: Vec<Option<f64>>,
    pub excluded: Vec<String>,
}

/// Normalizes the natural-vs-visualization curve against the two natural
/// baselines, then smooths the defined points and adds a `+/-` std band.
/// Window sizes shrink to the largest odd size that fits when fewer layers
/// survive exclusion.
pub fn similarity_report(
    metric: Metric,
    layers: &[String],
    same: &[Option<f64>],
    cross: &[Option<f64>],
    viz: &[Option<f64>],
    window: usize,
    std_window: usize,
) -> Result<SimilarityReport, AnalysisError> {
    if layers.len() != same.len() {
        return Err(AnalysisError::LengthMismatch(layers.len(), same.len()));
    }
    let (normalized, excluded) = normalize_curve(viz, same, cross)?;
    let defined: Vec<usize> = (0..layers.len()).filter(|&i| normalized[i].is_some()).collect();
    let values: Vec<f64> = defined.iter().map(|&i| normalized[i].expect("defined")).collect();
    let fit = |w: usize| {
        let w = w.min(values.len());
        if w % 2 == 0 {
            w.saturating_sub(1)
        } else {
            w
        }
    };
    let mut smoothed = vec![None; layers.len()];
    let mut band_lo = vec![None; layers.len()];
    let mut band_hi = vec![None; layers.len()];
    if !values.is_empty() {
        let s = smooth_curve(&values, fit(window))?;
        let sd = moving_std(&values, fit(std_window))?;
        for (k, &i) in defined.iter().enumerate() {
            smoothed[i] = Some(s[k]);
            band_lo[i] = Some(s[k] - sd[k]);
            band_hi[i] = Some(s[k] + sd[k]);
        }
    }
    Ok(SimilarityReport {
        metric,
        layers: layers.to_vec(),
        raw_same: same.to_vec(),
        raw_cross: cross.to_vec(),
        raw_viz: viz.to_vec(),
        normalized,
        smoothed,
        band_lo,
        band_hi,
        excluded: excluded.iter().map(|&i| layers[i].clone()).collect(),
    })
}

/// One row per layer: layer, the three raw curves, normalized, smoothed,
/// band bounds and the exclusion flag. Undefined values are empty cells.
pub fn write_similarity_csv(report: &SimilarityReport, path: &Path) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "layer",
        "raw_same",
        "raw_cross",
        "raw_viz",
        "normalized",
        "smoothed",
        "band_lo",
        "band_hi",
        "excluded",
    ])?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (i, layer) in report.layers.iter().enumerate() {
        w.write_record([
            layer.clone(),
            cell(report.raw_same[i]),
            cell(report.raw_cross[i]),
            cell(report.raw_viz[i]),
            cell(report.normalized[i]),
            cell(report.smoothed[i]),
            cell(report.band_lo[i]),
            cell(report.band_hi[i]),
            report.excluded.contains(layer).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Indices of images whose top-1 prediction matches their label.
pub fn correctly_classified(graph: &LayerGraph, data: &Dataset) -> Result<Vec<usize>, AnalysisError> {
    let pred = graph.predict(data.images())?;
    Ok(pred
        .iter()
        .zip(data.labels())
        .enumerate()
        .filter(|(_, (p, l))| p == l)
        .map(|(i, _)| i)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        let (n, ex) = normalize_curve(&[Some(0.5), Some(0.6)], &[Some(0.6), Some(0.6)], &[Some(0.2), Some(0.2)]).unwrap();
        assert!((n[0].unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(n[1], Some(1.0));
        assert!(ex.is_empty());
        let (n, ex) = normalize_curve(&[Some(0.5)], &[Some(0.205)], &[Some(0.2)]).unwrap();
        assert_eq!((n, ex), (vec![None], vec![0]));
    }

    #[test]
    fn impulse_plateau() {
        let mut v = vec![0.0; 15];
        v[7] = 1.0;
        let s = smooth_curve(&v, 7).unwrap();
        for (i, x) in s.iter().enumerate() {
            let expect = if (4..=10).contains(&i) { 1.0 / 7.0 } else { 0.0 };
            assert!((x - expect).abs() < 1e-15, "{i}: {x}");
        }
        assert!(smooth_curve(&v, 17).is_err());
        assert!(smooth_curve(&v, 4).is_err());
    }

    #[test]
    fn constant_is_fixed() {
        let v = vec![0.37; 9];
        assert_eq!(smooth_curve(&v, 7).unwrap(), v);
        assert!(moving_std(&v, 5).unwrap().iter().all(|&s| s == 0.0));
    }
}
