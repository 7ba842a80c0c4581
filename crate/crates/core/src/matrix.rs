//! Dense row-major matrices and the row-stochastic score matrix.

use crate::divergence::{clip_and_renormalize, EPS_CLIP};
use crate::error::{Error, Result};

/// Dense row-major `rows × cols` matrix of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "matrix data",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    what: "matrix row",
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

/// `N × C` matrix whose rows are probability vectors bounded away from zero.
///
/// Construction clips every entry to at least [`EPS_CLIP`] and renormalizes,
/// so each row is strictly positive and sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    inner: Matrix,
    eps_clip: f64,
}

impl ScoreMatrix {
    /// Validates, clips, and renormalizes raw score rows.
    pub fn new(raw: Matrix) -> Result<Self> {
        Self::with_eps(raw, EPS_CLIP)
    }

    pub fn with_eps(mut raw: Matrix, eps_clip: f64) -> Result<Self> {
        let classes = raw.cols();
        if classes == 0 {
            return Err(Error::InvalidArgument("score matrix needs at least one class".into()));
        }
        if !(eps_clip > 0.0 && eps_clip * classes as f64 <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "eps_clip {eps_clip} outside (0, 1/C] for C = {classes}"
            )));
        }
        for i in 0..raw.rows() {
            let row = raw.row_mut(i);
            if row.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "score row {i} has a negative or non-finite entry"
                )));
            }
            if row.iter().sum::<f64>() <= 0.0 {
                return Err(Error::InvalidArgument(format!("score row {i} sums to zero")));
            }
            clip_and_renormalize(row, eps_clip);
        }
        Ok(Self {
            inner: raw,
            eps_clip,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn n(&self) -> usize {
        self.inner.rows()
    }

    pub fn classes(&self) -> usize {
        self.inner.cols()
    }

    pub fn eps_clip(&self) -> f64 {
        self.eps_clip
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.inner.row(i)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.inner
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            inner: self.inner.select_rows(idx),
            eps_clip: self.eps_clip,
        }
    }

    /// Wraps rows already known to be clipped simplex vectors.
    pub(crate) fn from_clipped(inner: Matrix, eps_clip: f64) -> Self {
        Self { inner, eps_clip }
    }
}
