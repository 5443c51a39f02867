use serde::{Deserialize, Serialize};

use crate::class::{membership_check, ClassTag};
use crate::grid::{minmax_summary, sup_norm, Grid, GridFunction, MinMaxSummary};
use crate::TheoryError;

/// Two class members with the same summary, far apart in sup norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexamplePair {
    pub f1: GridFunction,
    pub f2: GridFunction,
    pub tag: ClassTag,
    pub summary: MinMaxSummary,
    /// `‖f1 − f2‖∞` measured on the grid.
    pub gap: f64,
    /// Lower bound on the gap that the construction promises.
    pub promised_gap: f64,
    /// Discretization allowance on `promised_gap`.
    pub tolerance: f64,
    /// The Lipschitz pair with `±L` wings, for which no classification
    /// witness is promised.
    pub wing_pair: bool,
}

impl CounterexamplePair {
    pub fn gap_ok(&self) -> bool {
        self.gap >= self.promised_gap - self.tolerance
    }
}

/// Position along the segment from `a` (where the value is `lo`) to `b`
/// (where it is `hi`): `u` is 0 at `a` and 1 at `b`. Outside the segment
/// `dist` is the distance to the nearer end.
struct Segment {
    xa: f64,
    len: f64,
    dir: f64,
}

enum Place {
    BeyondA(f64),
    Inside(f64),
    BeyondB(f64),
}

impl Segment {
    fn new(xa: f64, xb: f64) -> Self {
        Self {
            xa,
            len: (xb - xa).abs(),
            dir: (xb - xa).signum(),
        }
    }

    fn place(&self, x: f64) -> Place {
        let t = (x - self.xa) * self.dir;
        if t <= 0.0 {
            Place::BeyondA(-t)
        } else if t >= self.len {
            Place::BeyondB(t - self.len)
        } else {
            Place::Inside(t / self.len)
        }
    }

    /// Whether the part beyond `a` lies at lower grid indices than `a`.
    fn a_side_lower(&self) -> bool {
        self.dir > 0.0
    }
}

fn lerp(from: f64, to: f64, u: f64) -> f64 {
    (1.0 - u) * from + u * to
}

/// Values sampled on the grid, clamped into `[lo, hi]` and pinned to the
/// summary at its two points so round-off cannot move the extremes.
fn build(grid: Grid, s: &MinMaxSummary, f: impl Fn(f64) -> f64) -> Result<GridFunction, TheoryError> {
    let mut values: Vec<f64> = (0..grid.len()).map(|i| f(grid.coord(i)).clamp(s.f_min, s.f_max)).collect();
    values[grid.flat(&s.x_min)] = s.f_min;
    values[grid.flat(&s.x_max)] = s.f_max;
    GridFunction::new(grid, values)
}

/// Flat-then-steep pair: `f1` stays at `f_min` up to the midpoint of the
/// segment and then climbs at twice the average slope; `f2` climbs first and
/// then stays at `f_max`. Stretches that would tie an extreme at a lower grid
/// index are tilted by a slope of `range * h^2` so the lowest-index argmin and
/// argmax stay put. Outside the segment both follow a wing of the same slope
/// toward the middle of the range, or stay flat where ties are harmless.
fn steep_pair(grid: Grid, s: &MinMaxSummary) -> Result<(GridFunction, GridFunction, f64), TheoryError> {
    let (lo, hi) = (s.f_min, s.f_max);
    let range = hi - lo;
    let seg = Segment::new(s.x_min_coord()[0], s.x_max_coord()[0]);
    let slope = 2.0 * range / seg.len;
    let tilt = range * grid.spacing().powi(2);
    let lower = seg.a_side_lower();
    let wing = move |p: &Place| -> Option<f64> {
        match *p {
            Place::BeyondA(d) => Some(if lower { lo + (slope * d).min(range / 2.0) } else { lo }),
            Place::BeyondB(d) => Some(if lower { hi } else { hi - (slope * d).min(range / 2.0) }),
            Place::Inside(_) => None,
        }
    };
    // f1 rests near f_min on the first half; the rest is tilted only when it
    // lies below `a` in index order.
    let f1_rest = if lower { 0.0 } else { tilt * seg.len / 2.0 };
    let f2_rest = if lower { tilt * seg.len / 2.0 } else { 0.0 };
    let f1 = build(grid, s, |x| {
        let p = seg.place(x);
        wing(&p).unwrap_or_else(|| match p {
            Place::Inside(u) if u <= 0.5 => lo + f1_rest * 2.0 * u,
            Place::Inside(u) => lerp(lo + f1_rest, hi, 2.0 * u - 1.0),
            _ => unreachable!(),
        })
    })?;
    let f2 = build(grid, s, |x| {
        let p = seg.place(x);
        wing(&p).unwrap_or_else(|| match p {
            Place::Inside(u) if u <= 0.5 => lerp(lo, hi - f2_rest, 2.0 * u),
            Place::Inside(u) => hi - f2_rest * (2.0 - 2.0 * u),
            _ => unreachable!(),
        })
    })?;
    Ok((f1, f2, slope))
}

/// Pair for convex functions: the maximum sits on an end of `[0,1]`. `f1`
/// is the straight ramp from the minimizer to that end, `f2` the ramp of
/// twice the slope starting halfway.
fn convex_pair(grid: Grid, s: &MinMaxSummary) -> Result<(GridFunction, GridFunction, f64), TheoryError> {
    let (lo, hi) = (s.f_min, s.f_max);
    let range = hi - lo;
    let xa = s.x_min_coord()[0];
    let xb = s.x_max_coord()[0];
    let tilt = range * grid.spacing().powi(2);
    if xb == 1.0 {
        let len = 1.0 - xa;
        let mid = (xa + 1.0) / 2.0;
        let left = move |x: f64| lo + tilt * (xa - x);
        let f1 = build(grid, s, |x| if x <= xa { left(x) } else { lerp(lo, hi, (x - xa) / len) })?;
        let f2 = build(grid, s, |x| {
            if x <= xa {
                left(x)
            } else if x <= mid {
                lo
            } else {
                lerp(lo, hi, (x - mid) / (1.0 - mid))
            }
        })?;
        Ok((f1, f2, 2.0 * range / len))
    } else if xb == 0.0 {
        let mid = xa / 2.0;
        let f1 = build(grid, s, |x| if x >= xa { lo } else { lerp(hi, lo, x / xa) })?;
        let f2 = build(grid, s, |x| {
            if x >= xa {
                lo
            } else if x >= mid {
                lo + tilt * (xa - x)
            } else {
                lerp(hi, lo + tilt * (xa - mid), x / mid)
            }
        })?;
        Ok((f1, f2, 2.0 * range / xa))
    } else {
        Err(TheoryError::NotMember {
            tag: ClassTag::Convex,
            detail: format!("maximum at interior point {xb}"),
        })
    }
}

/// Lipschitz pair for summaries too steep for the flat-then-steep pair: both
/// members follow the straight line between the extremes; outside it `f1`
/// stays (nearly) flat and `f2` turns back with slope `L`, clamped to the
/// summary's range.
fn wing_pair(grid: Grid, s: &MinMaxSummary, l: f64) -> Result<(GridFunction, GridFunction), TheoryError> {
    let (lo, hi) = (s.f_min, s.f_max);
    let range = hi - lo;
    let h = grid.spacing();
    let tilt = range * h * h;
    let seg = Segment::new(s.x_min_coord()[0], s.x_max_coord()[0]);
    let lower = seg.a_side_lower();
    // a wing that reaches the other extreme on the lower-index side would
    // tie it there, so it stops one tilt step short.
    let (cap_a, floor_b) = if lower { (hi - tilt * h, lo) } else { (hi, lo + tilt * h) };
    let f1 = build(grid, s, |x| match seg.place(x) {
        Place::BeyondA(d) => lo + if lower { tilt * d } else { 0.0 },
        Place::BeyondB(d) => hi - if lower { 0.0 } else { tilt * d },
        Place::Inside(u) => lerp(lo, hi, u),
    })?;
    let f2 = build(grid, s, |x| match seg.place(x) {
        Place::BeyondA(d) => (lo + l * d).min(cap_a),
        Place::BeyondB(d) => (hi - l * d).max(floor_b),
        Place::Inside(u) => lerp(lo, hi, u),
    })?;
    Ok((f1, f2))
}

/// Affine pairs on the unit square for the two anti-diagonal corner
/// configurations. Every `f_c(x) = c + (v10 − c) x1 + (v01 − c) x2` with `c`
/// strictly between the extremes shares the summary; the two members take
/// `c` one half-step from either end.
fn affine2_pair(grid: Grid, s: &MinMaxSummary) -> Result<Option<(GridFunction, GridFunction)>, TheoryError> {
    let last = grid.n - 1;
    let (lo, hi) = (s.f_min, s.f_max);
    let (v10, v01) = if s.x_min == [0, last] && s.x_max == [last, 0] {
        (hi, lo)
    } else if s.x_min == [last, 0] && s.x_max == [0, last] {
        (lo, hi)
    } else {
        return Ok(None);
    };
    let eps = (hi - lo) * grid.spacing().powi(2) / 2.0;
    let member = |c: f64| -> Result<GridFunction, TheoryError> {
        let mut values: Vec<f64> = (0..grid.len())
            .map(|i| {
                let x = grid.point(i);
                (c + (v10 - c) * x[0] + (v01 - c) * x[1]).clamp(lo, hi)
            })
            .collect();
        values[grid.flat(&s.x_min)] = lo;
        values[grid.flat(&s.x_max)] = hi;
        GridFunction::new(grid, values)
    };
    Ok(Some((member(lo + eps)?, member(hi - eps)?)))
}

fn trivial(f: &GridFunction, tag: ClassTag, summary: MinMaxSummary) -> CounterexamplePair {
    CounterexamplePair {
        f1: f.clone(),
        f2: f.clone(),
        tag,
        summary,
        gap: 0.0,
        promised_gap: 0.0,
        tolerance: 0.0,
        wing_pair: false,
    }
}

/// Distance from the extremes to the far ends of `[0,1]`, the reach of the
/// Lipschitz wings.
pub fn wing_reach(s: &MinMaxSummary) -> f64 {
    let (a, b) = (s.x_min_coord()[0], s.x_max_coord()[0]);
    a.min(b).max(1.0 - a.max(b))
}

/// Whether the flat-then-steep pair fits in `Lip_L`.
pub fn lipschitz_steep_fits(s: &MinMaxSummary, l: f64) -> bool {
    let len = (s.x_max_coord()[0] - s.x_min_coord()[0]).abs();
    2.0 * s.range() <= l * len
}

/// Builds the counterexample pair for `f`'s summary within `tag`.
pub fn construct_pair(f: &GridFunction, tag: ClassTag) -> Result<CounterexamplePair, TheoryError> {
    if tag.is_recoverable() {
        return Err(TheoryError::NoPair(tag));
    }
    if f.grid().dim != tag.dim() {
        return Err(TheoryError::Config(format!("{tag} pairs need a {}-dimensional grid", tag.dim())));
    }
    membership_check(f, tag).map_err(|w| TheoryError::NotMember { tag, detail: w.detail })?;
    let grid = f.grid();
    let s = minmax_summary(f);
    if s.f_min == s.f_max {
        return Ok(trivial(f, tag, s));
    }
    let range = s.range();
    let h = grid.spacing();
    let (f1, f2, promised, slope, wings) = match tag {
        ClassTag::Convex => {
            let (f1, f2, slope) = convex_pair(grid, &s)?;
            (f1, f2, range / 2.0, slope, false)
        }
        ClassTag::Lipschitz { l } if !lipschitz_steep_fits(&s, l) => {
            let (f1, f2) = wing_pair(grid, &s, l)?;
            let promised = (l * wing_reach(&s)).min(range);
            (f1, f2, promised, l, true)
        }
        ClassTag::Affine { .. } => match affine2_pair(grid, &s)? {
            Some((f1, f2)) => (f1, f2, range, range, false),
            None => return Ok(trivial(f, tag, s)),
        },
        _ => {
            let (f1, f2, slope) = steep_pair(grid, &s)?;
            (f1, f2, range, slope, false)
        }
    };
    let gap = sup_norm(&f1, &f2)?;
    Ok(CounterexamplePair {
        f1,
        f2,
        tag,
        summary: s,
        gap,
        promised_gap: promised,
        tolerance: 2.0 * h * slope,
        wing_pair: wings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction::from_fn(Grid::line(n).unwrap(), |x| f(x[0])).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn monotone_identity_pair() {
        let p = construct_pair(&line(1001, |x| x), ClassTag::Monotone).unwrap();
        assert_eq!(minmax_summary(&p.f1), p.summary);
        assert_eq!(minmax_summary(&p.f2), p.summary);
        let g = p.f1.grid();
        for x in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let i = (x * 1000.0f64).round() as usize;
            let want1 = if x <= 0.5 { 0.0 } else { 2.0 * x - 1.0 };
            let want2 = if x <= 0.5 { 2.0 * x } else { 1.0 };
            assert!(close(p.f1.values()[i], want1, 1e-5), "{x}");
            assert!(close(p.f2.values()[i], want2, 1e-5), "{x}");
            let _ = g;
        }
        assert!(close(p.gap, 1.0, 1e-5));
        assert!(p.gap_ok());
    }

    #[test]
    fn convex_identity_pair() {
        let p = construct_pair(&line(1001, |x| x), ClassTag::Convex).unwrap();
        assert!(close(p.f1.values()[500], 0.5, 1e-12));
        assert!(close(p.f2.values()[500], 0.0, 1e-12));
        assert!(close(p.gap, 0.5, 1e-12));
        assert!(membership_check(&p.f2, ClassTag::Convex).is_ok());
    }

    #[test]
    fn affine_corner_pair() {
        let grid = Grid::square(101).unwrap();
        let f = GridFunction::from_fn(grid, |x| 0.5 + 0.3 * x[0] - 0.3 * x[1]).unwrap();
        let p = construct_pair(&f, ClassTag::Affine { d: 2 }).unwrap();
        assert_eq!(p.summary.x_min, vec![0, 100]);
        assert_eq!(p.summary.x_max, vec![100, 0]);
        assert!(close(p.gap, 0.6, 1e-4));
        assert!(p.gap_ok());
        let f = GridFunction::from_fn(grid, |x| 0.2 + 0.3 * x[0] + 0.3 * x[1]).unwrap();
        assert_eq!(construct_pair(&f, ClassTag::Affine { d: 2 }).unwrap().gap, 0.0);
    }

    #[test]
    fn recoverable_classes_have_no_pair() {
        let f = line(11, |x| x);
        assert!(matches!(construct_pair(&f, ClassTag::Affine { d: 1 }), Err(TheoryError::NoPair(_))));
        assert!(matches!(construct_pair(&f, ClassTag::Constant), Err(TheoryError::NoPair(_))));
    }

    #[test]
    fn constant_gives_zero_gap() {
        let p = construct_pair(&line(11, |_| 0.4), ClassTag::Monotone).unwrap();
        assert_eq!(p.gap, 0.0);
        assert_eq!(p.f1, p.f2);
    }
}
