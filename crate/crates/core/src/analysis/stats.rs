use statrs::distribution::{ContinuousCDF, StudentsT};

use super::AnalysisError;

fn check_pair(u: &[f64], v: &[f64], min: usize) -> Result<(), AnalysisError> {
    if u.len() != v.len() {
        return Err(AnalysisError::LengthMismatch(u.len(), v.len()));
    }
    if u.len() < min {
        return Err(AnalysisError::TooShort { needed: min, found: u.len() });
    }
    if let Some(x) = u.iter().chain(v).find(|x| !x.is_finite()) {
        return Err(AnalysisError::NonFinite(*x));
    }
    Ok(())
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn pearson_unchecked(u: &[f64], v: &[f64]) -> Option<f64> {
    let (mu, mv) = (mean(u), mean(v));
    let (mut uv, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        let (da, db) = (a - mu, b - mv);
        uv += da * db;
        uu += da * da;
        vv += db * db;
    }
    if uu == 0.0 || vv == 0.0 {
        return None;
    }
    Some((uv / (uu.sqrt() * vv.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation; `None` when either vector is constant.
pub fn pearson(u: &[f64], v: &[f64]) -> Result<Option<f64>, AnalysisError> {
    check_pair(u, v, 2)?;
    Ok(pearson_unchecked(u, v))
}

fn has_ties(ranks: &[f64]) -> bool {
    let mut seen = vec![false; ranks.len()];
    ranks.iter().any(|&r| {
        let i = r as usize - 1;
        r.fract() != 0.0 || std::mem::replace(&mut seen[i], true)
    })
}

/// Spearman rank correlation (Pearson on average ranks); `None` when
/// either vector is constant. Without ties this is `1 - 6 sum d^2 / (n (n^2 - 1))`,
/// evaluated in integers.
pub fn spearman(u: &[f64], v: &[f64]) -> Result<Option<f64>, AnalysisError> {
    check_pair(u, v, 2)?;
    let (ru, rv) = (ranks(u), ranks(v));
    if has_ties(&ru) || has_ties(&rv) {
        return Ok(pearson_unchecked(&ru, &rv));
    }
    let n = u.len() as u128;
    let d2: u128 = ru
        .iter()
        .zip(&rv)
        .map(|(a, b)| {
            let d = (*a as i128 - *b as i128).unsigned_abs();
            d * d
        })
        .sum();
    Ok(Some(1.0 - (6 * d2) as f64 / (n * (n * n - 1)) as f64))
}

/// Cosine similarity; `None` when either vector is zero.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<Option<f64>, AnalysisError> {
    check_pair(u, v, 1)?;
    let (mut uv, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Ok(None);
    }
    Ok(Some((uv / (uu.sqrt() * vv.sqrt())).clamp(-1.0, 1.0)))
}

/// Spearman's r with a two-sided p-value from `t = r sqrt((n-2)/(1-r^2))`
/// on `n - 2` degrees of freedom. `|r| = 1` gives `p = 0`.
pub fn spearman_with_p(xs: &[f64], ys: &[f64]) -> Result<Option<(f64, f64)>, AnalysisError> {
    check_pair(xs, ys, 4)?;
    let Some(r) = spearman(xs, ys)? else {
        return Ok(None);
    };
    Ok(Some((r, t_test_p(r, xs.len()))))
}

/// Two-sided p-value of a correlation `r` over `n` pairs.
pub fn t_test_p(r: f64, n: usize) -> f64 {
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.cdf(-t.abs())).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn average_ranks() {
        assert_eq!(ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), Some(-1.0));
        // 1 - 6 * 2 / (4 * 15)
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap().unwrap();
        assert!((r - 0.8).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), None);
    }

    #[test]
    fn cosine_and_pearson() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), Some(0.0));
        assert_eq!(cosine(&[0.0, 0.0], &[0.0, 2.0]).unwrap(), None);
        let u = [0.3, -1.0, 2.5, 4.0];
        let v: Vec<f64> = u.iter().map(|x| 2.0 * x + 3.0).collect();
        assert!((pearson(&u, &v).unwrap().unwrap() - 1.0).abs() < 1e-12);
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn p_value_extremes() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(spearman_with_p(&xs, &xs).unwrap(), Some((1.0, 0.0)));
        assert!((t_test_p(0.0, 30) - 1.0).abs() < 1e-12);
    }
}
