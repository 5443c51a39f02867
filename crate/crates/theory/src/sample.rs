use rand::Rng;

use crate::class::ClassTag;
use crate::grid::{Grid, GridFunction};
use crate::TheoryError;

/// Random `lo < hi` in `[0,1]` at least `min_range` apart.
fn value_range(rng: &mut impl Rng, min_range: f64) -> (f64, f64) {
    let width = rng.gen_range(min_range..=1.0);
    let lo = rng.gen_range(0.0..=1.0 - width);
    (lo, lo + width)
}

/// Affinely maps `raw` onto `[lo, hi]`.
fn rescale(raw: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    raw.iter()
        .map(|v| if span == 0.0 { lo } else { (lo + (hi - lo) * (v - min) / span).clamp(lo, hi) })
        .collect()
}

/// Linear interpolation through random knots.
fn knots(grid: Grid, rng: &mut impl Rng) -> Vec<f64> {
    let k = rng.gen_range(2..=8);
    let mut xs: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.0)).collect();
    xs.push(0.0);
    xs.push(1.0);
    xs.sort_by(f64::total_cmp);
    let ys: Vec<f64> = xs.iter().map(|_| rng.gen_range(0.0..=1.0)).collect();
    (0..grid.n)
        .map(|i| {
            let x = grid.coord(i);
            let j = xs.partition_point(|&k| k <= x).clamp(1, xs.len() - 1);
            let (x0, x1) = (xs[j - 1], xs[j]);
            if x1 == x0 {
                ys[j]
            } else {
                ys[j - 1] + (ys[j] - ys[j - 1]) * (x - x0) / (x1 - x0)
            }
        })
        .collect()
}

/// A random member of `tag` on a grid with `n` points per axis.
pub fn random_member(tag: ClassTag, n: usize, rng: &mut impl Rng) -> Result<GridFunction, TheoryError> {
    let grid = Grid::new(tag.dim(), n)?;
    let values = match tag {
        ClassTag::Blackbox | ClassTag::Nn | ClassTag::Erm => (0..grid.len()).map(|_| rng.gen_range(0.0..=1.0)).collect(),
        ClassTag::PiecewiseAffine => knots(grid, rng),
        ClassTag::Monotone => {
            let mut acc = 0.0;
            let mut raw: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.gen_bool(0.7) {
                        acc += rng.gen_range(0.0..1.0);
                    }
                    acc
                })
                .collect();
            if rng.gen_bool(0.5) {
                raw.reverse();
            }
            let (lo, hi) = value_range(rng, 0.05);
            rescale(&raw, lo, hi)
        }
        ClassTag::Convex => {
            let pieces: Vec<(f64, f64)> =
                (0..rng.gen_range(1..=5)).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5))).collect();
            let raw: Vec<f64> = (0..n)
                .map(|i| {
                    let x = grid.coord(i);
                    pieces.iter().map(|(a, b)| a * x + b).fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            let (lo, hi) = value_range(rng, 0.05);
            rescale(&raw, lo, hi)
        }
        ClassTag::Lipschitz { l } => {
            let segments = rng.gen_range(1..=6);
            let mut cuts: Vec<f64> = (0..segments - 1).map(|_| rng.gen_range(0.0..1.0)).collect();
            cuts.sort_by(f64::total_cmp);
            let slopes: Vec<f64> = (0..segments).map(|_| rng.gen_range(-l..=l) * 0.999).collect();
            let h = grid.spacing();
            let mut v: f64 = rng.gen_range(0.0..=1.0);
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                out.push(v.clamp(0.0, 1.0));
                let seg = cuts.partition_point(|&c| c <= grid.coord(i));
                v += slopes[seg] * h;
            }
            out
        }
        ClassTag::Affine { d: 1 } => {
            let (u, v) = (rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0));
            (0..n).map(|i| (u + (v - u) * grid.coord(i)).clamp(0.0, 1.0)).collect()
        }
        ClassTag::Affine { .. } => {
            let (a, b) = (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            let c_lo = -f64::min(0.0, a) - f64::min(0.0, b);
            let c_hi = 1.0 - f64::max(0.0, a) - f64::max(0.0, b);
            let c = rng.gen_range(c_lo..=c_hi);
            (0..grid.len())
                .map(|i| {
                    let x = grid.point(i);
                    (a * x[0] + b * x[1] + c).clamp(0.0, 1.0)
                })
                .collect()
        }
        ClassTag::Constant => vec![rng.gen_range(0.0..=1.0); n],
    };
    GridFunction::new(grid, values)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::class::membership_check;

    #[test]
    fn samples_belong_to_their_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for tag in [
            ClassTag::PiecewiseAffine,
            ClassTag::Monotone,
            ClassTag::Convex,
            ClassTag::Lipschitz { l: 0.5 },
            ClassTag::Lipschitz { l: 4.0 },
            ClassTag::Affine { d: 1 },
            ClassTag::Affine { d: 2 },
            ClassTag::Constant,
        ] {
            let n = if tag.dim() == 2 { 21 } else { 201 };
            for _ in 0..20 {
                let f = random_member(tag, n, &mut rng).unwrap();
                assert!(membership_check(&f, tag).is_ok(), "{tag}");
            }
        }
    }
}
