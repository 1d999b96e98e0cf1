//! Dense row-major `f64` tensors of rank 1 to 4.
//!
//! Images use channels-last indexing `[height][width][channel]`; a batch of
//! images adds a leading batch extent `[n][height][width][channel]`.

mod gemm;

pub(crate) use gemm::gemm;

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const MAX_RANK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::shape(format!(
            "rank must be 1..={MAX_RANK}, got shape {shape:?}"
        )));
    }
    if shape.contains(&0) {
        return Err(Error::shape(format!("zero extent in shape {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len = check_shape(shape)?;
        if data.len() != len {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::filled(shape, 0.0)
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self {
            shape: other.shape.clone(),
            data: vec![0.0; other.data.len()],
        }
    }

    /// Rank-1 tensor from a nonempty slice.
    pub fn vector(values: &[f64]) -> Result<Self> {
        Self::new(&[values.len()], values.to_vec())
    }

    /// Rank-2 tensor from equal-length rows.
    pub fn matrix(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged matrix rows"));
        }
        Self::new(&[rows.len(), cols], rows.concat())
    }

    /// i.i.d. draws from `Normal(mean, stddev^2)`.
    pub fn gaussian_fill(shape: &[usize], mean: f64, stddev: f64, rng: &mut Rng) -> Result<Self> {
        if stddev < 0.0 || !stddev.is_finite() || !mean.is_finite() {
            return Err(Error::param(format!(
                "gaussian_fill needs finite mean and stddev >= 0, got mean {mean}, stddev {stddev}"
            )));
        }
        let len = check_shape(shape)?;
        let data = (0..len)
            .map(|_| mean + stddev * rng.standard_normal())
            .collect();
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    fn require_same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// `[p x q] * [q x r] -> [p x r]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::shape(format!(
                "matmul: cannot multiply {:?} by {:?}",
                self.shape, other.shape
            )));
        }
        let (p, q, r) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; p * r];
        gemm(p, q, r, &self.data, &other.data, &mut out, false);
        Tensor::new(&[p, r], out)
    }

    /// Rank-2 transpose.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::shape(format!(
                "transpose needs rank 2, got {:?}",
                self.shape
            )));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        Tensor::new(&[c, r], transpose_raw(r, c, &self.data))
    }

    pub fn elementwise(&self, other: &Tensor, op: ElementwiseOp) -> Result<Tensor> {
        self.require_same_shape(other, "elementwise")?;
        let f: fn(f64, f64) -> f64 = match op {
            ElementwiseOp::Add => |x, y| x + y,
            ElementwiseOp::Sub => |x, y| x - y,
            ElementwiseOp::Mul => |x, y| x * y,
        };
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, ElementwiseOp::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, ElementwiseOp::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, ElementwiseOp::Mul)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| s * x).collect(),
        }
    }

    /// `self + s * g`.
    pub fn scale_add(&self, s: f64, g: &Tensor) -> Result<Tensor> {
        let mut out = self.clone();
        out.scale_add_assign(s, g)?;
        Ok(out)
    }

    /// In-place `self += s * g`; the optimizer's update primitive.
    pub fn scale_add_assign(&mut self, s: f64, g: &Tensor) -> Result<()> {
        self.require_same_shape(g, "scale_add")?;
        for (x, &d) in self.data.iter_mut().zip(&g.data) {
            *x += s * d;
        }
        Ok(())
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.require_same_shape(other, "add_assign")?;
        for (x, &d) in self.data.iter_mut().zip(&other.data) {
            *x += d;
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Index of the largest element, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &x) in self.data.iter().enumerate() {
            if x > self.data[best] {
                best = i;
            }
        }
        best
    }
}

pub(crate) fn transpose_raw(rows: usize, cols: usize, data: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = data[i * cols + j];
        }
    }
    out
}
