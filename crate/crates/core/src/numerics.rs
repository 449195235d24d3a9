//! Dense double-precision kernels shared by every cell.
//!
//! Vectors are plain `Vec<f64>` / `&[f64]`. Matrices are row-major. Every
//! forward matrix-vector product goes through [`dot`] so that batched and
//! single-frame evaluation produce bitwise-identical results.

use std::cell::Cell;

use rand::Rng;

use crate::error::{Error, Result};

pub type Vector = Vec<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

thread_local! {
    static MULTIPLY_COUNT: Cell<u64> = const { Cell::new(0) };
}

/// Per-thread counter of multiplies performed by forward matrix products.
///
/// Only `matvec`/`matvec_batch` count; backward kernels do not.
pub mod op_counter {
    use super::MULTIPLY_COUNT;

    pub fn reset() {
        MULTIPLY_COUNT.with(|c| c.set(0));
    }

    pub fn read() -> u64 {
        MULTIPLY_COUNT.with(|c| c.get())
    }

    pub(crate) fn add(n: u64) {
        MULTIPLY_COUNT.with(|c| c.set(c.get() + n));
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims("Matrix::from_vec", (rows, cols), (data.len(), 1)));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::dims("Matrix::from_rows", (rows.len(), cols), (1, row.len())));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Uniform entries in `[-scale, scale]`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-scale..=scale))
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `M·v`, rejecting a length mismatch.
    pub fn matvec(&self, v: &[f64]) -> Result<Vector> {
        if v.len() != self.cols {
            return Err(Error::dims("matvec", self.shape(), (v.len(), 1)));
        }
        op_counter::add((self.rows * self.cols) as u64);
        Ok((0..self.rows).map(|r| dot(self.row(r), v)).collect())
    }

    /// `M·v_b` for every column vector in `vs`, one kernel call for the window.
    ///
    /// Each output element is the same [`dot`] that [`Matrix::matvec`] computes.
    pub fn matvec_batch(&self, vs: &[&[f64]]) -> Result<Vec<Vector>> {
        if let Some(bad) = vs.iter().find(|v| v.len() != self.cols) {
            return Err(Error::dims("matvec_batch", self.shape(), (bad.len(), vs.len())));
        }
        op_counter::add((self.rows * self.cols * vs.len()) as u64);
        let mut out = vec![vec![0.0; self.rows]; vs.len()];
        for r in 0..self.rows {
            let row = self.row(r);
            for (o, v) in out.iter_mut().zip(vs) {
                o[r] = dot(row, v);
            }
        }
        Ok(out)
    }

    /// `out += Mᵀ·v`. Backward kernel, unchecked beyond debug assertions.
    pub fn matvec_t_acc(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &vr) in v.iter().enumerate() {
            if vr == 0.0 {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(self.row(r)) {
                *o += m * vr;
            }
        }
    }

    /// `self += a ⊗ b` (outer product, `a` indexes rows).
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (r, &ar) in a.iter().enumerate() {
            if ar == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (m, &bc) in row.iter_mut().zip(b) {
                *m += ar * bc;
            }
        }
    }
}

/// Left-to-right dot product. The summation order is part of the contract.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn sigmoid(v: &[f64]) -> Vector {
    v.iter().map(|&x| sigmoid_scalar(x)).collect()
}

pub fn tanh(v: &[f64]) -> Vector {
    v.iter().map(|x| x.tanh()).collect()
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Result<Vector> {
    if a.len() != b.len() {
        return Err(Error::dims("hadamard", (a.len(), 1), (b.len(), 1)));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

pub fn add(a: &[f64], b: &[f64]) -> Result<Vector> {
    if a.len() != b.len() {
        return Err(Error::dims("add", (a.len(), 1), (b.len(), 1)));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x + y).collect())
}

pub fn add_assign(acc: &mut [f64], v: &[f64]) {
    debug_assert_eq!(acc.len(), v.len());
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

pub fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn uniform_vec<R: Rng + ?Sized>(len: usize, scale: f64, rng: &mut R) -> Vector {
    (0..len).map(|_| rng.gen_range(-scale..=scale)).collect()
}
