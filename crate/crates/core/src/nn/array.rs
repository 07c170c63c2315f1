use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense array of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseArray {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        DenseArray {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                len,
                data.len()
            )));
        }
        Ok(DenseArray {
            shape: shape.to_vec(),
            data,
        })
    }

    /// One-dimensional array.
    pub fn vector(data: Vec<f64>) -> Self {
        DenseArray {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut out = Self::zeros(&[n, n]);
        for i in 0..n {
            out.data[i * n + i] = 1.0;
        }
        out
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Rows and columns of a 2-D array, or `(1, n)` for a vector.
    pub fn rows_cols(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [n] => Ok((1, *n)),
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Shape(format!("expected 1-D or 2-D array, got {s:?}"))),
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &DenseArray, scale: f64) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "cannot add {:?} to {:?}",
                other.shape, self.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// `out[j] += sum_i x[i] * w[i, j]` for a row-major `w` of shape `x.len() x out.len()`.
#[inline]
pub fn vec_mat_acc(x: &[f64], w: &[f64], out: &mut [f64]) {
    let cols = out.len();
    debug_assert_eq!(w.len(), x.len() * cols);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &w[i * cols..(i + 1) * cols];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
}

/// `out[i] += sum_j w[i, j] * dy[j]`, the transpose product used in backward passes.
#[inline]
pub fn mat_vec_acc(w: &[f64], dy: &[f64], out: &mut [f64]) {
    let cols = dy.len();
    debug_assert_eq!(w.len(), out.len() * cols);
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        let mut s = 0.0;
        for (&wij, &d) in row.iter().zip(dy) {
            s += wij * d;
        }
        *o += s;
    }
}

/// `g[i, j] += x[i] * dy[j]`.
#[inline]
pub fn outer_acc(x: &[f64], dy: &[f64], g: &mut [f64]) {
    let cols = dy.len();
    debug_assert_eq!(g.len(), x.len() * cols);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &mut g[i * cols..(i + 1) * cols];
        for (gij, &d) in row.iter_mut().zip(dy) {
            *gij += xi * d;
        }
    }
}
