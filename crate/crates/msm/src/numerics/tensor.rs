//! Dense little tensor: a shape plus a flat `Vec<f64>`.
//!
//! Complex data is stored with a trailing dimension of size 2 holding
//! interleaved (re, im) pairs; the `complex` flag records that convention so
//! file IO and image export can interpret the payload.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    complex: bool,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; len], complex: false }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                len,
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data, complex: false })
    }

    /// Marks the tensor as complex; requires a trailing dimension of 2.
    pub fn into_complex(mut self) -> Result<Self> {
        if self.shape.last() != Some(&2) {
            return Err(Error::Shape(format!(
                "complex tensors need a trailing dim of 2, shape is {:?}",
                self.shape
            )));
        }
        self.complex = true;
        Ok(self)
    }

    pub fn from_slice(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.to_vec())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_complex(&self) -> bool {
        self.complex
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Errors if any entry is NaN or infinite. Used at module boundaries so
    /// that non-finite values never escape silently.
    pub fn assert_finite(&self, context: &str) -> Result<()> {
        ensure_finite(&self.data, context)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
            complex: self.complex,
        }
    }
}

pub fn ensure_finite(data: &[f64], context: &str) -> Result<()> {
    for (i, &x) in data.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite value {x} at index {i} in {context}"
            )));
        }
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn mean(a: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().sum::<f64>() / a.len() as f64
}

pub fn variance(a: &[f64]) -> f64 {
    if a.len() < 2 {
        return 0.0;
    }
    let m = mean(a);
    a.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (a.len() - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_shape_product() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        let err = Tensor::from_vec(&[2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn complex_flag_requires_trailing_pair() {
        let t = Tensor::zeros(&[4, 2]).into_complex().unwrap();
        assert!(t.is_complex());
        assert!(Tensor::zeros(&[4, 3]).into_complex().is_err());
    }

    #[test]
    fn finite_check_catches_nan() {
        let mut t = Tensor::zeros(&[3]);
        t.data_mut()[1] = f64::NAN;
        assert!(t.assert_finite("test").is_err());
    }
}
