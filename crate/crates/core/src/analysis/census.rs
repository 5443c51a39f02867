use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::netgraph::{Dataset, LayerGraph, LayerKind};
use crate::tensorcore::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCensus {
    pub layer: String,
    pub units: usize,
    pub silent_units: usize,
    pub channels: usize,
    pub silent_channels: usize,
    /// Channel indices whose every unit is silent.
    pub silent_channel_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilentCensus {
    pub layers: Vec<LayerCensus>,
    pub silent_units: usize,
    pub total_units: usize,
    pub unit_fraction: f64,
    pub silent_channels: usize,
    pub total_channels: usize,
    pub channel_fraction: f64,
}

/// Largest activation of every unit of every ReLU layer over the dataset.
pub fn relu_maxima(graph: &LayerGraph, data: &Dataset) -> Result<Vec<(String, Tensor)>, AnalysisError> {
    let relus: Vec<&str> = graph
        .layers()
        .iter()
        .filter(|l| matches!(l.kind, LayerKind::Relu))
        .map(|l| l.name.as_str())
        .collect();
    let mut maxima: Vec<Option<Tensor>> = vec![None; relus.len()];
    let n = data.len();
    for start in (0..n).step_by(128) {
        let idx: Vec<usize> = (start..(start + 128).min(n)).collect();
        let (batch, _) = data.batch(&idx);
        let taps = graph.forward_with_taps(&batch, &relus)?;
        for (slot, name) in maxima.iter_mut().zip(&relus) {
            let act = &taps[*name];
            let per = act.len() / idx.len();
            // Post-ReLU values are never negative.
            let m = slot.get_or_insert_with(|| Tensor::zeros(&act.shape()[1..]));
            for row in act.data().chunks(per) {
                for (a, b) in m.data_mut().iter_mut().zip(row) {
                    *a = a.max(*b);
                }
            }
        }
    }
    Ok(relus
        .into_iter()
        .zip(maxima)
        .filter_map(|(name, m)| m.map(|m| (name.to_string(), m)))
        .collect())
}

/// Counts post-ReLU units whose maximum over `data` is exactly zero, and
/// channels all of whose units are.
pub fn silent_census(graph: &LayerGraph, data: &Dataset) -> Result<SilentCensus, AnalysisError> {
    if data.is_empty() {
        return Err(AnalysisError::Config("census needs at least one image".into()));
    }
    let mut layers = Vec::new();
    for (layer, max) in relu_maxima(graph, data)? {
        let channels = max.shape()[0];
        let per = max.len() / channels;
        let mut silent_units = 0;
        let mut silent_channel_ids = Vec::new();
        for (c, chunk) in max.data().chunks(per).enumerate() {
            let silent = chunk.iter().filter(|&&v| v == 0.0).count();
            silent_units += silent;
            if silent == per {
                silent_channel_ids.push(c);
            }
        }
        layers.push(LayerCensus {
            layer,
            units: max.len(),
            silent_units,
            channels,
            silent_channels: silent_channel_ids.len(),
            silent_channel_ids,
        });
    }
    let sum = |f: fn(&LayerCensus) -> usize| layers.iter().map(f).sum::<usize>();
    let (silent_units, total_units) = (sum(|l| l.silent_units), sum(|l| l.units));
    let (silent_channels, total_channels) = (sum(|l| l.silent_channels), sum(|l| l.channels));
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(SilentCensus {
        unit_fraction: frac(silent_units, total_units),
        channel_fraction: frac(silent_channels, total_channels),
        layers,
        silent_units,
        total_units,
        silent_channels,
        total_channels,
    })
}
