//! Dense row-major matrices.
//!
//! The default scalar is `f64`; tape replays instantiate the same type with
//! [`Dual`](crate::scalar::Dual) entries. Shape checks on the arithmetic
//! helpers are assertions: public entry points (tape ops, losses, model)
//! validate shapes up front and return proper errors, so a mismatch down
//! here is a bug, not an input problem.

use crate::error::{Error, Result};
use crate::scalar::{Dual, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<S = f64> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                detail: format!("{}x{} needs {} entries, got {}", rows, cols, rows * cols, data.len()),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, rhs: &Self, f: impl Fn(S, S) -> S) -> Self {
        assert_eq!(self.shape(), rhs.shape(), "zip_map shape mismatch");
        let data = self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn add(&self, rhs: &Self) -> Self {
        self.zip_map(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        self.zip_map(rhs, |a, b| a - b)
    }

    pub fn hadamard(&self, rhs: &Self) -> Self {
        self.zip_map(rhs, |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Self {
        let k = S::from_f64(k);
        self.map(|v| v * k)
    }

    /// `self += k * rhs`, in place.
    pub fn axpy(&mut self, k: f64, rhs: &Self) {
        assert_eq!(self.shape(), rhs.shape(), "axpy shape mismatch");
        let k = S::from_f64(k);
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a = *a + k * b;
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul inner dimension mismatch");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == S::zero() {
                    continue;
                }
                let lhs_row = i * rhs.cols;
                for j in 0..rhs.cols {
                    out.data[lhs_row + j] = out.data[lhs_row + j] + a * rhs.data[k * rhs.cols + j];
                }
            }
        }
        out
    }

    pub fn sum(&self) -> S {
        self.data.iter().fold(S::zero(), |acc, &v| acc + v)
    }

    /// Numerically stable softmax applied to each row: the row max is subtracted
    /// before exponentiation, so the largest term is exp(0) = 1.
    pub fn row_softmax(&self) -> Self {
        let mut out = self.clone();
        for r in 0..self.rows {
            let row = &mut out.data[r * self.cols..(r + 1) * self.cols];
            let mut m = row[0];
            for &v in row.iter().skip(1) {
                m = m.max(v);
            }
            let mut total = S::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                total = total + *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        out
    }
}

impl Matrix<f64> {
    /// Checked constructor: length must match and every entry must be finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let m = Matrix::from_vec(rows, cols, data)?;
        if !m.is_finite() {
            return Err(Error::NonFinite("matrix constructor".into()));
        }
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::ShapeMismatch { op: "from_rows", detail: "no rows".into() });
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::ShapeMismatch {
                    op: "from_rows",
                    detail: format!("row {} has {} entries, expected {}", i, r.len(), cols),
                });
            }
            data.extend_from_slice(r);
        }
        Matrix::new(rows.len(), cols, data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Lifts to dual entries; `tangent = None` means a zero tangent.
    pub fn to_dual(&self, tangent: Option<&Matrix<f64>>) -> Matrix<Dual> {
        match tangent {
            None => Matrix {
                rows: self.rows,
                cols: self.cols,
                data: self.data.iter().map(|&v| Dual::constant(v)).collect(),
            },
            Some(t) => {
                assert_eq!(self.shape(), t.shape(), "tangent shape mismatch");
                Matrix {
                    rows: self.rows,
                    cols: self.cols,
                    data: self
                        .data
                        .iter()
                        .zip(&t.data)
                        .map(|(&v, &d)| Dual::new(v, d))
                        .collect(),
                }
            }
        }
    }
}

impl Matrix<Dual> {
    pub fn primal(&self) -> Matrix<f64> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|d| d.value).collect(),
        }
    }

    pub fn tangent(&self) -> Matrix<f64> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|d| d.tangent).collect(),
        }
    }
}

/// One-hot encodes class indices into an `n x classes` matrix.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Matrix> {
    if classes == 0 {
        return Err(Error::InvalidData("one_hot: zero classes".into()));
    }
    let mut m = Matrix::zeros(labels.len(), classes);
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::InvalidData(format!(
                "one_hot: label {} at row {} out of range (classes = {})",
                l, i, classes
            )));
        }
        m.set(i, l, 1.0);
    }
    Ok(m)
}
