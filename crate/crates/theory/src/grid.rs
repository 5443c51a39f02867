use serde::{Deserialize, Serialize};

use crate::TheoryError;

/// Uniform grid over `[0,1]^dim` with `n` points per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub n: usize,
}

impl Grid {
    pub fn new(dim: usize, n: usize) -> Result<Self, TheoryError> {
        if !(dim == 1 || dim == 2) {
            return Err(TheoryError::Config(format!("grids are 1- or 2-dimensional, got {dim}")));
        }
        if n < 2 {
            return Err(TheoryError::Config(format!("need at least 2 points per axis, got {n}")));
        }
        Ok(Self { dim, n })
    }

    pub fn line(n: usize) -> Result<Self, TheoryError> {
        Self::new(1, n)
    }

    pub fn square(n: usize) -> Result<Self, TheoryError> {
        Self::new(2, n)
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.n - 1) as f64
    }

    /// Per-axis indices of a flat index; the last axis varies fastest.
    pub fn indices(&self, flat: usize) -> Vec<usize> {
        match self.dim {
            1 => vec![flat],
            _ => vec![flat / self.n, flat % self.n],
        }
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.n + i)
    }

    pub fn coord(&self, i: usize) -> f64 {
        i as f64 / (self.n - 1) as f64
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.indices(flat).into_iter().map(|i| self.coord(i)).collect()
    }
}

/// A function `[0,1]^dim -> [0,1]` sampled on a grid, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self, TheoryError> {
        if values.len() != grid.len() {
            return Err(TheoryError::Config(format!("{} values for a grid of {}", values.len(), grid.len())));
        }
        if let Some(&v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(TheoryError::OutOfRange(v));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self, TheoryError> {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self::new(grid, values)
    }

    pub fn constant(grid: Grid, value: f64) -> Result<Self, TheoryError> {
        Self::new(grid, vec![value; grid.len()])
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        self.values[self.grid.flat(idx)]
    }
}

/// Location and value of the minimum and maximum of a grid function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxSummary {
    pub grid: Grid,
    pub x_min: Vec<usize>,
    pub x_max: Vec<usize>,
    pub f_min: f64,
    pub f_max: f64,
}

impl MinMaxSummary {
    pub fn midpoint(&self) -> f64 {
        (self.f_min + self.f_max) / 2.0
    }

    pub fn range(&self) -> f64 {
        self.f_max - self.f_min
    }

    pub fn x_min_coord(&self) -> Vec<f64> {
        self.x_min.iter().map(|&i| self.grid.coord(i)).collect()
    }

    pub fn x_max_coord(&self) -> Vec<f64> {
        self.x_max.iter().map(|&i| self.grid.coord(i)).collect()
    }
}

/// Grid argmin and argmax; the lowest flat index wins ties.
pub fn minmax_summary(f: &GridFunction) -> MinMaxSummary {
    let v = f.values();
    let (mut lo, mut hi) = (0, 0);
    for (i, &x) in v.iter().enumerate() {
        if x < v[lo] {
            lo = i;
        }
        if x > v[hi] {
            hi = i;
        }
    }
    MinMaxSummary {
        grid: f.grid(),
        x_min: f.grid().indices(lo),
        x_max: f.grid().indices(hi),
        f_min: v[lo],
        f_max: v[hi],
    }
}

pub fn sup_norm(f: &GridFunction, g: &GridFunction) -> Result<f64, TheoryError> {
    if f.grid() != g.grid() {
        return Err(TheoryError::GridMismatch(f.grid(), g.grid()));
    }
    Ok(f.values().iter().zip(g.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}
