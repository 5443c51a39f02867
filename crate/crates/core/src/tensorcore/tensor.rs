use serde::{Deserialize, Serialize};

use super::TensorError;

/// Storage precision of a tensor.
///
/// Arithmetic is always carried out in `f64`. A tensor tagged `F32` holds
/// only values that are exactly representable as `f32`, so it serializes to
/// four bytes per element without loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub fn byte_width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

/// Dense row-major tensor of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    precision: Precision,
}

pub(crate) fn element_count(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::InvalidShape(shape));
        }
        let expected = element_count(&shape).ok_or_else(|| TensorError::InvalidShape(shape.clone()))?;
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFiniteData { index });
        }
        Ok(Self {
            shape,
            data,
            precision: Precision::F64,
        })
    }

    /// Builds a tensor without the finiteness scan. Callers guarantee the invariant.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(element_count(&shape), Some(data.len()));
        Self {
            shape,
            data,
            precision: Precision::F64,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = element_count(shape).expect("shape overflow");
        assert!(shape.iter().all(|&d| d > 0), "zero extent in {shape:?}");
        Self::from_parts(shape.to_vec(), vec![0.0; n])
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(value.is_finite());
        let mut t = Self::zeros(shape);
        t.data.iter_mut().for_each(|v| *v = value);
        t
    }

    pub fn scalar(value: f64) -> Self {
        assert!(value.is_finite());
        Self::from_parts(vec![1], vec![value])
    }

    pub fn vector(values: &[f64]) -> Result<Self, TensorError> {
        Self::new(vec![values.len()], values.to_vec())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the elements. Writing non-finite values breaks the
    /// tensor invariant; [`Tensor::validate`] re-checks it.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(TensorError::NonFiniteData { index }),
            None => Ok(()),
        }
    }

    /// Retags the tensor; converting to `F32` rounds every element.
    pub fn with_precision(mut self, precision: Precision) -> Self {
        if precision == Precision::F32 {
            for v in &mut self.data {
                *v = *v as f32 as f64;
            }
        }
        self.precision = precision;
        self
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, TensorError> {
        if element_count(&shape) != Some(self.data.len()) || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ReshapeMismatch {
                from: self.shape,
                to: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut off = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of bounds for axis {i} (extent {dim})");
            off = off * dim + ix;
        }
        off
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        assert!(value.is_finite());
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Slice of the leading axis, e.g. one image out of a batch.
    pub fn index_axis0(&self, i: usize) -> Tensor {
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape[1..].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        Tensor {
            shape,
            data: self.data[i * inner..(i + 1) * inner].to_vec(),
            precision: self.precision,
        }
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor, TensorError> {
        let first = items.first().ok_or(TensorError::InvalidShape(vec![0]))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(TensorError::ReshapeMismatch {
                    from: t.shape.clone(),
                    to: first.shape.clone(),
                });
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor::from_parts(shape, data))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        let mut t = Tensor::from_parts(self.shape.clone(), data);
        t.precision = self.precision;
        t
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Elementwise `self + scale * other`.
    pub fn axpy(&self, scale: f64, other: &Tensor) -> Tensor {
        assert_eq!(self.shape, other.shape, "axpy shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + scale * b)
            .collect();
        Tensor::from_parts(self.shape.clone(), data)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.map(|v| v.clamp(lo, hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch_and_nan() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(TensorError::NonFiniteData { index: 1 })
        ));
        assert!(Tensor::new(vec![0, 3], vec![]).is_err());
    }

    #[test]
    fn f32_tag_rounds() {
        let t = Tensor::vector(&[0.1]).unwrap().with_precision(Precision::F32);
        assert_eq!(t.data()[0], 0.1f32 as f64);
        assert_eq!(t.precision(), Precision::F32);
    }

    #[test]
    fn offsets_are_row_major() {
        let t = Tensor::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(t.at(&[1, 2]), 5.0);
        assert_eq!(t.index_axis0(1).data(), &[3.0, 4.0, 5.0]);
    }
}
