use crate::class::ClassTag;
use crate::grid::{GridFunction, MinMaxSummary};
use crate::TheoryError;

/// Any map from a summary to a predicted function.
pub type Decoder<'a> = dyn Fn(&MinMaxSummary) -> GridFunction + 'a;

/// The constant `(f_max + f_min) / 2`.
pub fn midpoint_decoder(s: &MinMaxSummary) -> GridFunction {
    GridFunction::constant(s.grid, s.midpoint()).expect("midpoint of values in [0,1]")
}

/// Worst-case sup error of the midpoint decoder over all functions with
/// summary `s`.
pub fn midpoint_bound(s: &MinMaxSummary) -> f64 {
    s.range() / 2.0
}

/// Slope and intercept of the line through `(x_min, f_min)` and `(x_max, f_max)`.
pub fn affine_coefficients(s: &MinMaxSummary) -> Result<(f64, f64), TheoryError> {
    if s.grid.dim != 1 {
        return Err(TheoryError::Config("the affine decoder works on 1-dimensional grids".into()));
    }
    let (x0, x1) = (s.x_min_coord()[0], s.x_max_coord()[0]);
    if x0 == x1 {
        return Err(TheoryError::ImpossibleSummary(format!(
            "x_min = x_max = {x0} with f_min = {} and f_max = {}",
            s.f_min, s.f_max
        )));
    }
    let a = (s.f_max - s.f_min) / (x1 - x0);
    let b = (x1 * s.f_min - x0 * s.f_max) / (x1 - x0);
    Ok((a, b))
}

/// Decoders that recover every member of `affine(1)` or `constant` from
/// its summary. Predictions are clamped to `[0,1]`, which only matters for
/// summaries that no affine function has.
pub fn exact_decoder(s: &MinMaxSummary, tag: ClassTag) -> Result<GridFunction, TheoryError> {
    match tag {
        ClassTag::Constant => GridFunction::constant(s.grid, s.f_min),
        ClassTag::Affine { d: 1 } => {
            if s.x_min == s.x_max {
                if s.f_min != s.f_max {
                    return Err(TheoryError::ImpossibleSummary(format!(
                        "one point carries both {} and {}",
                        s.f_min, s.f_max
                    )));
                }
                return GridFunction::constant(s.grid, s.f_min);
            }
            let (a, b) = affine_coefficients(s)?;
            let mut values: Vec<f64> =
                (0..s.grid.len()).map(|i| (a * s.grid.coord(i) + b).clamp(0.0, 1.0)).collect();
            values[s.x_min[0]] = s.f_min;
            values[s.x_max[0]] = s.f_max;
            GridFunction::new(s.grid, values)
        }
        other => Err(TheoryError::NoExactDecoder(other)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{minmax_summary, sup_norm, Grid};

    fn summary(x_min: usize, x_max: usize, f_min: f64, f_max: f64) -> MinMaxSummary {
        MinMaxSummary {
            grid: Grid::line(101).unwrap(),
            x_min: vec![x_min],
            x_max: vec![x_max],
            f_min,
            f_max,
        }
    }

    #[test]
    fn midpoint_examples() {
        let s = summary(0, 100, 0.0, 1.0);
        assert_eq!(midpoint_decoder(&s).values()[17], 0.5);
        assert_eq!(midpoint_bound(&s), 0.5);
        let s = summary(3, 3, 0.3, 0.3);
        assert_eq!(midpoint_decoder(&s).values()[0], 0.3);
        assert_eq!(midpoint_bound(&s), 0.0);
    }

    #[test]
    fn affine_examples() {
        let (a, b) = affine_coefficients(&summary(0, 100, 0.2, 0.8)).unwrap();
        assert!((a - 0.6).abs() < 1e-15 && (b - 0.2).abs() < 1e-15);
        let (a, b) = affine_coefficients(&summary(100, 0, 0.2, 0.8)).unwrap();
        assert!((a + 0.6).abs() < 1e-15 && (b - 0.8).abs() < 1e-15);
        assert!(exact_decoder(&summary(5, 5, 0.2, 0.8), ClassTag::Affine { d: 1 }).is_err());
    }

    #[test]
    fn constant_recovery() {
        let f = GridFunction::constant(Grid::line(101).unwrap(), 0.4).unwrap();
        let s = minmax_summary(&f);
        assert_eq!((s.x_min[0], s.x_max[0]), (0, 0));
        let g = exact_decoder(&s, ClassTag::Constant).unwrap();
        assert_eq!(sup_norm(&f, &g).unwrap(), 0.0);
        assert!(exact_decoder(&s, ClassTag::Monotone).is_err());
    }
}
