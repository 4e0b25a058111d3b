//! Dense row-major tensors of rank 1 to 3.
//!
//! Sequences are stored channel-major as `[channels × tokens]` matrices, so a
//! row is one channel over time and a column is one token.

use std::fmt;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "[{} values]", self.data.len())
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 || shape.contains(&0) {
            return Err(Error::invalid(format!(
                "tensor shape {shape:?} must have rank 1-3 with positive extents"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid(format!(
                "tensor shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::new(shape.to_vec(), vec![value; n]).expect("valid shape")
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::new(vec![n], data).expect("non-empty vector")
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Build a matrix from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows[0].len();
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::matrix(rows.len(), cols, data).expect("valid matrix")
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
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

    /// Rows of a matrix (channels). Rank-1 tensors count as a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            _ => self.shape[0],
        }
    }

    /// Columns of a matrix (tokens).
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows()).map(|r| self.at(r, c)).collect()
    }

    fn require_rank(&self, op: &'static str, expected: usize) -> Result<()> {
        if self.rank() != expected {
            return Err(Error::Rank {
                op,
                expected,
                shape: self.shape.clone(),
            });
        }
        Ok(())
    }

    fn require_same_shape(&self, op: &'static str, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// Matrix product with ascending-k summation per output entry.
    pub fn matmul(&self, b: &Tensor) -> Result<Tensor> {
        self.require_rank("matmul", 2)?;
        b.require_rank("matmul", 2)?;
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (b.shape[0], b.shape[1]);
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                left: self.shape.clone(),
                right: b.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (kk, &a) in a_row.iter().enumerate() {
                let b_row = &b.data[kk * n..(kk + 1) * n];
                for (o, &bv) in o_row.iter_mut().zip(b_row) {
                    *o += a * bv;
                }
            }
        }
        Tensor::matrix(m, n, out)
    }

    /// `selfᵀ · b` without materializing the transpose.
    pub fn matmul_tn(&self, b: &Tensor) -> Result<Tensor> {
        self.require_rank("matmul_tn", 2)?;
        b.require_rank("matmul_tn", 2)?;
        let (k, m) = (self.shape[0], self.shape[1]);
        let (k2, n) = (b.shape[0], b.shape[1]);
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul_tn",
                left: self.shape.clone(),
                right: b.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        for kk in 0..k {
            let a_row = &self.data[kk * m..(kk + 1) * m];
            let b_row = &b.data[kk * n..(kk + 1) * n];
            for (i, &a) in a_row.iter().enumerate() {
                let o_row = &mut out[i * n..(i + 1) * n];
                for (o, &bv) in o_row.iter_mut().zip(b_row) {
                    *o += a * bv;
                }
            }
        }
        Tensor::matrix(m, n, out)
    }

    /// `self · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&self, b: &Tensor) -> Result<Tensor> {
        self.require_rank("matmul_nt", 2)?;
        b.require_rank("matmul_nt", 2)?;
        let (m, k) = (self.shape[0], self.shape[1]);
        let (n, k2) = (b.shape[0], b.shape[1]);
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul_nt",
                left: self.shape.clone(),
                right: b.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let b_row = &b.data[j * k..(j + 1) * k];
                out[i * n + j] = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            }
        }
        Tensor::matrix(m, n, out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        self.require_rank("transpose", 2)?;
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::matrix(n, m, out)
    }

    pub fn elementwise(&self, other: &Tensor, op: Elementwise) -> Result<Tensor> {
        self.require_same_shape(op.name(), other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| match op {
                Elementwise::Add => a + b,
                Elementwise::Mul => a * b,
            })
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, Elementwise::Add)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, Elementwise::Mul)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.require_same_shape("add_assign", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.require_same_shape("dot", other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.require_same_shape("max_abs_diff", other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Append columns filled with `value` up to `target` tokens.
    pub fn pad_tokens(&self, target: usize, value: f64) -> Result<Tensor> {
        self.require_rank("pad_tokens", 2)?;
        let (d, n) = (self.shape[0], self.shape[1]);
        if target < n {
            return Err(Error::invalid(format!(
                "pad_tokens: target {target} shorter than current {n} tokens"
            )));
        }
        let mut out = vec![value; d * target];
        for r in 0..d {
            out[r * target..r * target + n].copy_from_slice(self.row(r));
        }
        Tensor::matrix(d, target, out)
    }

    /// Columns `start..end`.
    pub fn slice_tokens(&self, start: usize, end: usize) -> Result<Tensor> {
        self.require_rank("slice_tokens", 2)?;
        if start >= end || end > self.cols() {
            return Err(Error::invalid(format!(
                "slice_tokens: range {start}..{end} outside {} tokens",
                self.cols()
            )));
        }
        let w = end - start;
        let mut out = Vec::with_capacity(self.rows() * w);
        for r in 0..self.rows() {
            out.extend_from_slice(&self.row(r)[start..end]);
        }
        Tensor::matrix(self.rows(), w, out)
    }

    /// Rows `start..end` (channel range).
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor> {
        self.require_rank("slice_rows", 2)?;
        if start >= end || end > self.rows() {
            return Err(Error::invalid(format!(
                "slice_rows: range {start}..{end} outside {} rows",
                self.rows()
            )));
        }
        let c = self.cols();
        Tensor::matrix(end - start, c, self.data[start * c..end * c].to_vec())
    }

    /// Stack matrices with equal column counts on top of each other.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or(Error::Empty("concat_rows"))?;
        let cols = first.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            p.require_rank("concat_rows", 2)?;
            if p.cols() != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    left: first.shape.clone(),
                    right: p.shape.clone(),
                });
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        Tensor::matrix(rows, cols, data)
    }

    /// Circularly rotate tokens: `out[:, (t + s) mod N] = self[:, t]`.
    pub fn rotate_tokens(&self, shift: isize) -> Tensor {
        let n = self.cols();
        let s = shift.rem_euclid(n as isize) as usize;
        let mut out = self.clone();
        for r in 0..self.rows() {
            let src = self.row(r);
            let dst = out.row_mut(r);
            for (t, &v) in src.iter().enumerate() {
                dst[(t + s) % n] = v;
            }
        }
        out
    }

    /// Shift tokens with zero fill: `out[:, t + s] = self[:, t]` where in range.
    pub fn shift_tokens(&self, shift: isize) -> Tensor {
        let n = self.cols() as isize;
        let mut out = Tensor::zeros(&self.shape);
        for r in 0..self.rows() {
            let src = self.row(r).to_vec();
            let dst = out.row_mut(r);
            for t in 0..n {
                let u = t + shift;
                if (0..n).contains(&u) {
                    dst[u as usize] = src[t as usize];
                }
            }
        }
        out
    }

    pub fn convert(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Mul,
}

impl Elementwise {
    fn name(self) -> &'static str {
        match self {
            Elementwise::Add => "add",
            Elementwise::Mul => "mul",
        }
    }
}

/// I.i.d. uniform values in `[lo, hi)`.
pub fn rand_uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Result<Tensor> {
    if lo >= hi || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!(
            "rand_uniform: need lo < hi, got [{lo}, {hi})"
        )));
    }
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_in(lo, hi)).collect();
    Tensor::new(shape.to_vec(), data)
}

pub fn rand_normal(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| std * rng.normal()).collect();
    Tensor::new(shape.to_vec(), data).expect("valid shape")
}
