use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::spearman_with_p;
use super::AnalysisError;
use crate::tensorcore::Tensor;

/// Angle between two vectors in `[0, pi]`, via `2 atan2(|a - b|, |a + b|)`
/// on the unit vectors so that parallel inputs give exactly zero.
pub fn angle_between(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let (mut d, mut s) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x / na, y / nb);
        d += (u - v) * (u - v);
        s += (u + v) * (u + v);
    }
    Some(2.0 * d.sqrt().atan2(s.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgpaReport {
    /// Mean angle between step `j` and `j + 1` over start images.
    pub curve: Vec<f64>,
    pub aga: f64,
    /// `prefix_aga[k - 1]` is the AGA over the first `k` angles.
    pub prefix_aga: Vec<f64>,
    /// Angles per start image; `None` where a gradient was zero.
    pub per_sequence: Vec<Vec<Option<f64>>>,
    pub excluded_steps: usize,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Average gradient path angle over gradient sequences of equal length.
pub fn agpa(sequences: &[Vec<Tensor>]) -> Result<AgpaReport, AnalysisError> {
    let len = sequences.first().map(|s| s.len()).unwrap_or(0);
    if len < 2 {
        return Err(AnalysisError::TooShort { needed: 2, found: len });
    }
    if let Some(s) = sequences.iter().find(|s| s.len() != len) {
        return Err(AnalysisError::LengthMismatch(len, s.len()));
    }
    let per_sequence: Vec<Vec<Option<f64>>> = sequences
        .iter()
        .map(|seq| seq.windows(2).map(|w| angle_between(w[0].data(), w[1].data())).collect())
        .collect();
    let excluded_steps = per_sequence.iter().flatten().filter(|a| a.is_none()).count();
    let mut curve = Vec::with_capacity(len - 1);
    for j in 0..len - 1 {
        let vals: Vec<f64> = per_sequence.iter().filter_map(|s| s[j]).collect();
        if vals.is_empty() {
            return Err(AnalysisError::Degenerate(format!("every gradient pair at step {} is zero", j + 1)));
        }
        curve.push(mean(&vals));
    }
    let prefix_aga = (1..=curve.len()).map(|k| mean(&curve[..k])).collect();
    Ok(AgpaReport {
        aga: mean(&curve),
        curve,
        prefix_aga,
        per_sequence,
        excluded_steps,
    })
}

/// Distance from `p` to the segment `[s, f]`.
pub fn segment_distance(p: &[f64], s: &[f64], f: &[f64]) -> Option<f64> {
    let dir: Vec<f64> = f.iter().zip(s).map(|(a, b)| a - b).collect();
    let dd: f64 = dir.iter().map(|v| v * v).sum();
    if dd == 0.0 {
        return None;
    }
    let t = (p.iter().zip(s).zip(&dir).map(|((x, a), d)| (x - a) * d).sum::<f64>() / dd).clamp(0.0, 1.0);
    Some(
        p.iter()
            .zip(s)
            .zip(&dir)
            .map(|((x, a), d)| {
                let r = x - (a + t * d);
                r * r
            })
            .sum::<f64>()
            .sqrt(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AldpReport {
    pub curve: Vec<f64>,
    pub ald: f64,
    pub per_trajectory: Vec<Vec<f64>>,
}

/// Average line distance profile: each `images[j]` of a trajectory is
/// measured against the segment from `start` to the last image, relative to
/// that segment's length.
pub fn aldp(trajectories: &[(Tensor, Vec<Tensor>)]) -> Result<AldpReport, AnalysisError> {
    let len = trajectories.first().map(|t| t.1.len()).unwrap_or(0);
    if len == 0 {
        return Err(AnalysisError::TooShort { needed: 1, found: 0 });
    }
    let mut per_trajectory = Vec::with_capacity(trajectories.len());
    for (start, images) in trajectories {
        if images.len() != len {
            return Err(AnalysisError::LengthMismatch(len, images.len()));
        }
        let fin = images.last().expect("non-empty").data();
        let span = fin.iter().zip(start.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let row = images
            .iter()
            .map(|x| segment_distance(x.data(), start.data(), fin).map(|d| d / span))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| AnalysisError::Degenerate("trajectory ends where it starts".into()))?;
        per_trajectory.push(row);
    }
    let curve: Vec<f64> = (0..len)
        .map(|j| per_trajectory.iter().map(|r| r[j]).sum::<f64>() / per_trajectory.len() as f64)
        .collect();
    Ok(AldpReport {
        ald: mean(&curve),
        curve,
        per_trajectory,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitLinearity {
    pub unit: String,
    pub aga: f64,
    pub ald: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub metric: String,
    pub r: f64,
    pub p: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityReport {
    pub agpa: Vec<f64>,
    pub aga: f64,
    pub aldp: Vec<f64>,
    pub ald: f64,
    pub units: Vec<UnitLinearity>,
    pub correlations: Vec<Correlation>,
}

/// Two-column `(unit_id, score)` CSV with a header row.
pub fn read_scores(path: &Path) -> Result<Vec<(String, f64)>, AnalysisError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(AnalysisError::Config(format!("score rows need 2 columns, found {}", rec.len())));
        }
        let score: f64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| AnalysisError::Config(format!("bad score `{}`", &rec[1])))?;
        out.push((rec[0].trim().to_string(), score));
    }
    Ok(out)
}

/// Spearman correlation of per-unit AGA and ALD against external scores,
/// matched by unit id. Units missing a score are skipped.
pub fn correlate_with_scores(
    units: &[UnitLinearity],
    scores: &[(String, f64)],
) -> Result<Vec<Correlation>, AnalysisError> {
    let mut pairs = Vec::new();
    for u in units {
        if let Some((_, s)) = scores.iter().find(|(id, _)| *id == u.unit) {
            pairs.push((u.aga, u.ald, *s));
        }
    }
    let ys: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    let mut out = Vec::new();
    for (name, xs) in [
        ("aga", pairs.iter().map(|p| p.0).collect::<Vec<_>>()),
        ("ald", pairs.iter().map(|p| p.1).collect()),
    ] {
        if let Some((r, p)) = spearman_with_p(&xs, &ys)? {
            out.push(Correlation {
                metric: name.to_string(),
                r,
                p,
                n: xs.len(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angles() {
        assert_eq!(angle_between(&[1.0, 2.0], &[2.0, 4.0]), Some(0.0));
        let a = angle_between(&[1.0, 0.0], &[0.0, 3.0]).unwrap();
        assert!((a - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        let a = angle_between(&[1.0, 0.0], &[-1.0, 0.0]).unwrap();
        assert!((a - std::f64::consts::PI).abs() < 1e-15);
        assert_eq!(angle_between(&[0.0, 0.0], &[1.0, 0.0]), None);
    }

    #[test]
    fn segment_geometry() {
        let (s, f) = ([0.0, 0.0], [2.0, 0.0]);
        assert_eq!(segment_distance(&[1.0, 1.0], &s, &f), Some(1.0));
        assert_eq!(segment_distance(&[3.0, 0.0], &s, &f), Some(1.0));
        assert_eq!(segment_distance(&[1.0, 1.0], &s, &s), None);
    }
}
