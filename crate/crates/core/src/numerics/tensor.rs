use crate::error::{shape_err, Error, Result};

use super::Scalar;

/// Dense row-major tensor of up to four extents (batch, channels, height, width).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || shape.len() > 4 {
            return Err(shape_err(format!("rank must be 1..=4, got {shape:?}")));
        }
        if numel != data.len() {
            return Err(shape_err(format!(
                "shape {shape:?} holds {numel} values but {} were given",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Shape padded on the left to rank 4.
    pub fn dims4(&self) -> [usize; 4] {
        let mut out = [1; 4];
        let off = 4 - self.shape.len();
        out[off..].copy_from_slice(&self.shape);
        out
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(shape_err(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.expect_shape(other.shape())?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.expect_shape(other.shape())?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn expect_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape == shape {
            Ok(())
        } else {
            Err(shape_err(format!("expected {shape:?}, got {:?}", self.shape)))
        }
    }

    /// Batch item `index` of an NCHW tensor, as `1×C×H×W`.
    pub fn select_batch(&self, index: usize) -> Result<Self> {
        let [n, c, h, w] = self.dims4();
        if index >= n {
            return Err(shape_err(format!("batch index {index} out of {n}")));
        }
        let plane = c * h * w;
        Ok(Self {
            shape: vec![1, c, h, w],
            data: self.data[index * plane..(index + 1) * plane].to_vec(),
        })
    }

    /// Stacks equally shaped `1×C×H×W` tensors along the batch extent.
    pub fn stack(items: &[&Self]) -> Result<Self> {
        let first = items.first().ok_or_else(|| shape_err("cannot stack an empty list"))?;
        let [_, c, h, w] = first.dims4();
        let mut data = Vec::with_capacity(items.len() * c * h * w);
        let mut n = 0;
        for item in items {
            let [bn, bc, bh, bw] = item.dims4();
            if (bc, bh, bw) != (c, h, w) {
                return Err(shape_err(format!(
                    "cannot stack {:?} with {:?}",
                    item.shape(),
                    first.shape()
                )));
            }
            n += bn;
            data.extend_from_slice(item.data());
        }
        Ok(Self {
            shape: vec![n, c, h, w],
            data,
        })
    }
}
