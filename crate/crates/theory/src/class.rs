use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::grid::GridFunction;
use crate::TheoryError;

/// Slack allowed in membership checks for floating-point round-off.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "class")]
pub enum ClassTag {
    Blackbox,
    Nn,
    Erm,
    Lipschitz { l: f64 },
    PiecewiseAffine,
    Monotone,
    Convex,
    Affine { d: usize },
    Constant,
}

impl ClassTag {
    /// Classes whose summary pins the function down exactly.
    pub fn is_recoverable(&self) -> bool {
        matches!(self, ClassTag::Affine { d: 1 } | ClassTag::Constant)
    }

    pub fn dim(&self) -> usize {
        match self {
            ClassTag::Affine { d } => *d,
            _ => 1,
        }
    }
}

impl fmt::Display for ClassTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassTag::Blackbox => write!(f, "blackbox"),
            ClassTag::Nn => write!(f, "nn"),
            ClassTag::Erm => write!(f, "erm"),
            ClassTag::Lipschitz { l } => write!(f, "lipschitz({l})"),
            ClassTag::PiecewiseAffine => write!(f, "piecewise-affine"),
            ClassTag::Monotone => write!(f, "monotone"),
            ClassTag::Convex => write!(f, "convex"),
            ClassTag::Affine { d } => write!(f, "affine({d})"),
            ClassTag::Constant => write!(f, "constant"),
        }
    }
}

impl FromStr for ClassTag {
    type Err = TheoryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        let arg = |prefix: &str| -> Option<String> {
            s.strip_prefix(prefix)
                .and_then(|r| r.strip_prefix('('))
                .and_then(|r| r.strip_suffix(')'))
                .map(|r| r.trim().trim_start_matches("l=").trim_start_matches("d=").to_string())
        };
        let bad = || TheoryError::Config(format!("unknown class `{s}`"));
        Ok(match s.as_str() {
            "blackbox" => ClassTag::Blackbox,
            "nn" => ClassTag::Nn,
            "erm" => ClassTag::Erm,
            "piecewise-affine" => ClassTag::PiecewiseAffine,
            "monotone" => ClassTag::Monotone,
            "convex" => ClassTag::Convex,
            "constant" => ClassTag::Constant,
            _ => {
                if let Some(a) = arg("lipschitz") {
                    let l: f64 = a.parse().map_err(|_| bad())?;
                    if !(l > 0.0 && l.is_finite()) {
                        return Err(TheoryError::Config(format!("Lipschitz constant must be positive, got {l}")));
                    }
                    ClassTag::Lipschitz { l }
                } else if let Some(a) = arg("affine") {
                    let d: usize = a.parse().map_err(|_| bad())?;
                    if !(d == 1 || d == 2) {
                        return Err(TheoryError::Config(format!("affine classes have d = 1 or 2, got {d}")));
                    }
                    ClassTag::Affine { d }
                } else {
                    return Err(bad());
                }
            }
        })
    }
}

/// Grid points that violate a class condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub points: Vec<usize>,
    pub detail: String,
}

fn fail(points: Vec<usize>, detail: String) -> Result<(), Witness> {
    Err(Witness { points, detail })
}

fn dim_witness(f: &GridFunction, tag: ClassTag) -> Result<(), Witness> {
    if f.grid().dim != tag.dim() {
        return fail(vec![], format!("{tag} needs a {}-dimensional grid, got {}", tag.dim(), f.grid().dim));
    }
    Ok(())
}

/// Pairs of grid neighbours along every axis, lower index first.
fn axis_steps(f: &GridFunction) -> Vec<(usize, usize)> {
    let g = f.grid();
    let mut out = Vec::new();
    for i in 0..g.len() {
        let idx = g.indices(i);
        for axis in 0..g.dim {
            if idx[axis] + 1 < g.n {
                let mut next = idx.clone();
                next[axis] += 1;
                out.push((i, g.flat(&next)));
            }
        }
    }
    out
}

fn check_monotone(f: &GridFunction) -> Result<(), Witness> {
    let v = f.values();
    let steps = axis_steps(f);
    let up = steps.iter().find(|(a, b)| v[*b] > v[*a] + MEMBERSHIP_TOL);
    let down = steps.iter().find(|(a, b)| v[*b] < v[*a] - MEMBERSHIP_TOL);
    match (up, down) {
        (Some(u), Some(d)) => fail(
            vec![d.0, d.1, u.0, u.1],
            format!("decreases from {} to {} and increases from {} to {}", d.0, d.1, u.0, u.1),
        ),
        _ => Ok(()),
    }
}

fn check_convex(f: &GridFunction) -> Result<(), Witness> {
    let v = f.values();
    if f.grid().dim != 1 {
        return fail(vec![], "convexity is checked on 1-dimensional grids only".into());
    }
    for i in 1..v.len() - 1 {
        let second = v[i - 1] - 2.0 * v[i] + v[i + 1];
        if second < -MEMBERSHIP_TOL {
            return fail(vec![i - 1, i, i + 1], format!("second difference {second:e} at {i}"));
        }
    }
    Ok(())
}

/// King-move neighbours suffice: in the sup norm any two grid points are
/// joined by a path of such steps whose lengths add up to their distance.
fn check_lipschitz(f: &GridFunction, l: f64) -> Result<(), Witness> {
    let g = f.grid();
    let v = f.values();
    let h = g.spacing();
    let mut pairs = axis_steps(f);
    if g.dim == 2 {
        for i in 0..g.n - 1 {
            for j in 0..g.n {
                if j + 1 < g.n {
                    pairs.push((g.flat(&[i, j]), g.flat(&[i + 1, j + 1])));
                }
                if j > 0 {
                    pairs.push((g.flat(&[i, j]), g.flat(&[i + 1, j - 1])));
                }
            }
        }
    }
    for (a, b) in pairs {
        let slope = (v[b] - v[a]).abs() / h;
        if slope > l + MEMBERSHIP_TOL {
            return fail(vec![a, b], format!("slope {slope} exceeds {l}"));
        }
    }
    Ok(())
}

fn check_affine(f: &GridFunction) -> Result<(), Witness> {
    let g = f.grid();
    let v = f.values();
    let origin = v[0];
    let slopes: Vec<f64> = (0..g.dim)
        .map(|axis| {
            let mut idx = vec![0; g.dim];
            idx[axis] = g.n - 1;
            v[g.flat(&idx)] - origin
        })
        .collect();
    for (i, &val) in v.iter().enumerate() {
        let fit = origin + g.point(i).iter().zip(&slopes).map(|(x, s)| x * s).sum::<f64>();
        if (val - fit).abs() > MEMBERSHIP_TOL {
            return fail(vec![i], format!("residual {:e} at {i}", val - fit));
        }
    }
    Ok(())
}

fn check_constant(f: &GridFunction) -> Result<(), Witness> {
    let v = f.values();
    match v.iter().position(|x| (x - v[0]).abs() > MEMBERSHIP_TOL) {
        Some(i) => fail(vec![0, i], format!("{} differs from {}", v[i], v[0])),
        None => Ok(()),
    }
}

/// Grid-level membership. Black-box, network, ERM and piecewise-affine
/// classes admit every grid function: linear interpolation of grid values is
/// piecewise affine and ReLU networks represent such functions exactly.
pub fn membership_check(f: &GridFunction, tag: ClassTag) -> Result<(), Witness> {
    match tag {
        ClassTag::Blackbox | ClassTag::Nn | ClassTag::Erm | ClassTag::PiecewiseAffine => Ok(()),
        ClassTag::Monotone => check_monotone(f),
        ClassTag::Convex => check_convex(f),
        ClassTag::Lipschitz { l } => check_lipschitz(f, l),
        ClassTag::Affine { .. } => {
            dim_witness(f, tag)?;
            check_affine(f)
        }
        ClassTag::Constant => check_constant(f),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn line(f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction::from_fn(Grid::line(1001).unwrap(), |x| f(x[0])).unwrap()
    }

    #[test]
    fn identity_is_in_every_simple_class() {
        let f = line(|x| x);
        for tag in [
            ClassTag::Monotone,
            ClassTag::Convex,
            ClassTag::Lipschitz { l: 1.0 },
            ClassTag::Affine { d: 1 },
        ] {
            assert!(membership_check(&f, tag).is_ok(), "{tag}");
        }
        assert!(membership_check(&f, ClassTag::Lipschitz { l: 0.5 }).is_err());
        assert!(membership_check(&f, ClassTag::Constant).is_err());
    }

    #[test]
    fn absolute_value() {
        let f = line(|x| (2.0 * x - 1.0).abs());
        let w = membership_check(&f, ClassTag::Monotone).unwrap_err();
        let xs: Vec<f64> = w.points.iter().map(|&i| i as f64 / 1000.0).collect();
        assert!(xs.iter().any(|&x| x <= 0.5) && xs.iter().any(|&x| x >= 0.5));
        assert!(membership_check(&f, ClassTag::Convex).is_ok());
    }

    #[test]
    fn concave_fails_convexity() {
        let f = line(|x| 4.0 * x * (1.0 - x));
        let w = membership_check(&f, ClassTag::Convex).unwrap_err();
        assert_eq!(w.points.len(), 3);
    }

    #[test]
    fn tags_round_trip() {
        for s in ["blackbox", "lipschitz(0.5)", "affine(2)", "piecewise-affine", "constant"] {
            assert_eq!(s.parse::<ClassTag>().unwrap().to_string(), s);
        }
        assert!("lipschitz(-1)".parse::<ClassTag>().is_err());
        assert!("affine(3)".parse::<ClassTag>().is_err());
    }
}
