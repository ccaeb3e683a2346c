//! Dense row-major tensors and a per-pass reverse-mode tape.

mod tape;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

use crate::error::{Error, Result};

pub use tape::{Gradients, Tape, Var};

/// Floating point element type. Training runs in `f32`; gradient checks in `f64`.
pub trait Real: Float + Debug + Display + Default + Sum + Send + Sync + 'static {
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
    /// Smallest representable value strictly greater than `self`.
    fn step_up(self) -> Self;
    /// Largest representable value strictly less than `self`.
    fn step_down(self) -> Self;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn step_up(self) -> Self {
        self.next_up()
    }
    fn step_down(self) -> Self {
        self.next_down()
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn step_up(self) -> Self {
        self.next_up()
    }
    fn step_down(self) -> Self {
        self.next_down()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::shape(format!("dims must be positive, got {dims:?}")));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "dims {dims:?} need {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn full(dims: &[usize], value: T) -> Self {
        let n = dims.iter().product();
        assert!(n > 0, "dims must be positive, got {dims:?}");
        Self {
            dims: dims.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            dims: vec![1],
            data: vec![value],
        }
    }

    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::shape("ragged rows"));
        }
        Self::new(vec![m, n], rows.iter().flat_map(|r| r.iter().copied()).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a matrix; a 1-D tensor is treated as a single row.
    pub fn rows(&self) -> usize {
        match self.dims.len() {
            1 => 1,
            _ => self.dims[..self.dims.len() - 1].iter().product(),
        }
    }

    pub fn cols(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn at(&self, row: usize, col: usize) -> T {
        self.data[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[T] {
        let n = self.cols();
        &self.data[row * n..(row + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_dims(other)?;
        Ok(Self {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn scale_in_place(&mut self, c: T) {
        for a in &mut self.data {
            *a = *a * c;
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn reshaped(mut self, dims: Vec<usize>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != self.data.len() || dims.contains(&0) {
            return Err(Error::shape(format!(
                "cannot reshape {:?} to {dims:?}",
                self.dims
            )));
        }
        self.dims = dims;
        Ok(self)
    }

    pub fn transpose(&self) -> Self {
        let (m, n) = (self.rows(), self.cols());
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Self {
            dims: vec![n, m],
            data: out,
        }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        if self.dims.len() != 2 || other.dims.len() != 2 || k != k2 {
            return Err(Error::shape(format!(
                "matmul {:?} x {:?}",
                self.dims, other.dims
            )));
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == T::zero() {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(Self {
            dims: vec![m, n],
            data: out,
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.expect_same_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }

    pub(crate) fn expect_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    let n = t.cols();
    let mut out = t.data.clone();
    for row in out.chunks_mut(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Tensor {
        dims: t.dims.clone(),
        data: out,
    }
}
