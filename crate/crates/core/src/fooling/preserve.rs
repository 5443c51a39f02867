use serde::{Deserialize, Serialize};

use super::circuit::gather;
use super::FoolError;
use crate::netgraph::{Dataset, LayerGraph};
use crate::tensorcore::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreservationReport {
    pub max_abs_diff: f64,
    pub top1_agreement: f64,
    /// Fraction of examples whose top-5 class sets coincide (top-K when
    /// there are fewer than five outputs).
    pub top5_agreement: f64,
    pub examples: usize,
    /// Largest output deviation per example.
    pub per_example_diff: Vec<f64>,
}

/// Class indices sorted by descending output, ties to the lower index.
fn ranking(row: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx
}

fn top1(row: &[f64]) -> usize {
    if row.len() == 1 {
        usize::from(row[0] >= 0.0)
    } else {
        ranking(row)[0]
    }
}

fn top5(row: &[f64]) -> Vec<usize> {
    if row.len() == 1 {
        return vec![top1(row)];
    }
    let mut top: Vec<usize> = ranking(row).into_iter().take(5).collect();
    top.sort_unstable();
    top
}

/// Runs both models over the whole dataset and compares their outputs.
pub fn verify_preservation(
    original: &LayerGraph,
    modified: &LayerGraph,
    data: &Dataset,
) -> Result<PreservationReport, FoolError> {
    if original.input_shape() != modified.input_shape() || original.output_len() != modified.output_len() {
        return Err(FoolError::Incompatible(format!(
            "{:?}->{} vs {:?}->{}",
            original.input_shape(),
            original.output_len(),
            modified.input_shape(),
            modified.output_len()
        )));
    }
    let k = original.output_len();
    let n = data.len();
    let mut per_example_diff = Vec::with_capacity(n);
    let (mut same1, mut same5) = (0usize, 0usize);
    for start in (0..n).step_by(128) {
        let idx: Vec<usize> = (start..(start + 128).min(n)).collect();
        let batch = gather(data.images(), &idx)?;
        let a: Tensor = original.forward(&batch)?;
        let b: Tensor = modified.forward(&batch)?;
        for (ra, rb) in a.data().chunks(k).zip(b.data().chunks(k)) {
            let d = ra.iter().zip(rb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            per_example_diff.push(d);
            same1 += usize::from(top1(ra) == top1(rb));
            same5 += usize::from(top5(ra) == top5(rb));
        }
    }
    let frac = |c: usize| if n == 0 { 1.0 } else { c as f64 / n as f64 };
    Ok(PreservationReport {
        max_abs_diff: per_example_diff.iter().cloned().fold(0.0, f64::max),
        top1_agreement: frac(same1),
        top5_agreement: frac(same5),
        examples: n,
        per_example_diff,
    })
}
