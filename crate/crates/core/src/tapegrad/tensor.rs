use std::fmt;

use crate::scalar::Scalar;

use super::TapeError;

/// Dense row-major array.
///
/// All networks in this crate work with rank-2 tensors; a scalar is `[1, 1]`
/// and a row vector is `[1, n]`.
#[derive(Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
    requires_grad: bool,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self, TapeError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TapeError::ShapeData {
                shape,
                len: data.len(),
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, TapeError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(TapeError::ShapeData {
                    shape: vec![r, c],
                    len: row.len(),
                });
            }
            data.extend(row.iter().map(|&x| S::lit(x)));
        }
        Self::new(vec![r, c], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<S>) -> Result<Self, TapeError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, S::zero())
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, S::one())
    }

    pub fn filled(rows: usize, cols: usize, value: S) -> Self {
        Self {
            shape: vec![rows, cols],
            data: vec![value; rows * cols],
            requires_grad: false,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.set(i, i, S::one());
        }
        t
    }

    pub fn scalar(value: S) -> Self {
        Self::filled(1, 1, value)
    }

    pub fn row(values: Vec<S>) -> Self {
        let n = values.len();
        Self {
            shape: vec![1, n],
            data: values,
            requires_grad: false,
        }
    }

    pub fn column(values: Vec<S>) -> Self {
        let n = values.len();
        Self {
            shape: vec![n, 1],
            data: values,
            requires_grad: false,
        }
    }

    /// Marks the tensor as a trainable leaf.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims(&self) -> Result<(usize, usize), TapeError> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(TapeError::Rank {
                expected: 2,
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn at(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: S) {
        let c = self.cols();
        self.data[i * c + j] = value;
    }

    pub fn item(&self) -> S {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
            requires_grad: false,
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            requires_grad: false,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: vec![S::zero(); self.data.len()],
            requires_grad: false,
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = Self::zeros(c, r);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, TapeError> {
        let (m, k) = self.dims()?;
        let (k2, n) = other.dims()?;
        if k != k2 {
            return Err(TapeError::Dimension {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == S::zero() {
                    continue;
                }
                let b = &other.data[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(b) {
                    *o = *o + a * bv;
                }
            }
        }
        Self::matrix(m, n, out)
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn frobenius_norm(&self) -> S {
        self.data.iter().map(|&x| x * x).sum::<S>().sqrt()
    }

    /// Entrywise L1 norm.
    pub fn l1_norm(&self) -> S {
        self.data.iter().map(|x| x.abs()).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> S {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(S::zero(), S::max)
    }

    /// Converts element type, e.g. `f64` checkpoint data into `f32` parameters.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| T::lit(x.as_f64())).collect(),
            requires_grad: self.requires_grad,
        }
    }
}

impl<S: fmt::Debug> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}
