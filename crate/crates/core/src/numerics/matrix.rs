//! Dense row-major f64 matrix with deterministic arithmetic.
//!
//! Reductions always accumulate in ascending index order, so every operation
//! is bit-reproducible for fixed inputs. That property backs the bitwise
//! equality checks used throughout the federation tests.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// Dense 2-D real matrix, row-major, 64-bit entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Build from row-major data. Rejects empty shapes, length mismatches
    /// and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidDimensions {
                what: "matrix",
                rows,
                cols,
            });
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidDimensions {
                what: "matrix data length",
                rows,
                cols,
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "matrix construction".to_string(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::from_vec(rows, cols, vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Self::from_vec(rows, cols, vec![value; rows * cols])
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut m = Self::zeros(n, n)?;
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        Ok(m)
    }

    /// Gaussian entries `N(0, std^2)` drawn in row-major order.
    pub fn randn<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Result<Self> {
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * std
            })
            .collect();
        Self::from_vec(rows, cols, data)
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Exact bit-level equality, distinguishing -0.0 from 0.0.
    pub fn bits_eq(&self, other: &Matrix) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    fn same_shape(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                op,
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: other.rows,
                right_cols: other.cols,
            });
        }
        Ok(())
    }

    /// Matrix product with a fixed ascending-k accumulation order.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: other.rows,
                right_cols: other.cols,
            });
        }
        // Transposing the right operand keeps both reads sequential while
        // preserving the ascending-k summation order.
        let bt = other.transpose();
        let mut out = vec![0.0; self.rows * other.cols];
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.cols {
                let b_col = bt.row(j);
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += a_row[k] * b_col[k];
                }
                out[i * other.cols + j] = acc;
            }
        }
        let m = Matrix {
            rows: self.rows,
            cols: other.cols,
            data: out,
        };
        if !m.is_finite() {
            return Err(Error::NonFinite {
                context: "matmul".to_string(),
            });
        }
        Ok(m)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.same_shape(other, "sub")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.same_shape(other, "hadamard")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// In-place `self += factor * other`.
    pub fn axpy(&mut self, factor: f64, other: &Matrix) -> Result<()> {
        self.same_shape(other, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
        Ok(())
    }

    /// Sum of all entries in ascending index order.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Mean over all entries.
    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Numerically stable softmax applied to each row independently.
    /// Every output row sums to 1 and all entries are positive.
    pub fn row_softmax(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            let row = self.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let slot = &mut out[r * self.cols..(r + 1) * self.cols];
            let mut total = 0.0;
            for (o, v) in slot.iter_mut().zip(row) {
                let e = (v - max).exp();
                *o = e;
                total += e;
            }
            for o in slot.iter_mut() {
                *o /= total;
            }
        }
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: out,
        }
    }

    /// L2-normalize each row. An all-zero row stays zero instead of
    /// producing NaN, which keeps degenerate untrained models evaluable.
    pub fn row_l2_normalize(&self) -> Matrix {
        let mut out = self.data.clone();
        for r in 0..self.rows {
            let row = self.row(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for o in &mut out[r * self.cols..(r + 1) * self.cols] {
                    *o /= norm;
                }
            }
        }
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: out,
        }
    }

    /// Gather whole rows by index; duplicates allowed.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Matrix> {
        let mut out = Vec::with_capacity(indices.len() * self.cols);
        for &idx in indices {
            if idx >= self.rows {
                return Err(Error::State {
                    message: format!("row index {idx} out of range for {} rows", self.rows),
                });
            }
            out.extend_from_slice(self.row(idx));
        }
        Matrix::from_vec(indices.len(), self.cols, out)
    }

    /// Select one entry per row, returning a column vector.
    pub fn pick_per_row(&self, cols: &[usize]) -> Result<Matrix> {
        if cols.len() != self.rows {
            return Err(Error::State {
                message: format!(
                    "pick_per_row needs {} indices, got {}",
                    self.rows,
                    cols.len()
                ),
            });
        }
        let mut out = Vec::with_capacity(self.rows);
        for (r, &c) in cols.iter().enumerate() {
            if c >= self.cols {
                return Err(Error::LabelOutOfRange {
                    row: r,
                    label: c,
                    classes: self.cols,
                });
            }
            out.push(self.get(r, c));
        }
        Matrix::from_vec(self.rows, 1, out)
    }

    /// Append a column of ones (used to fold a bias row into one matmul).
    pub fn append_ones_col(&self) -> Matrix {
        let mut out = Vec::with_capacity(self.rows * (self.cols + 1));
        for r in 0..self.rows {
            out.extend_from_slice(self.row(r));
            out.push(1.0);
        }
        Matrix {
            rows: self.rows,
            cols: self.cols + 1,
            data: out,
        }
    }

    /// Index of the per-row maximum; ties break toward the lowest index.
    pub fn row_argmax(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|r| {
                let row = self.row(r);
                let mut best = 0;
                for (i, v) in row.iter().enumerate().skip(1) {
                    if *v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_hand_example() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Matrix::from_vec(2, 1, vec![5.0, 6.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_identity_is_exact() {
        let m = Matrix::from_vec(2, 2, vec![0.3, -1.7, 2.5, 0.1]).unwrap();
        let i = Matrix::identity(2).unwrap();
        assert!(i.matmul(&m).unwrap().bits_eq(&m));
        assert!(m.matmul(&i).unwrap().bits_eq(&m));
    }

    #[test]
    fn matmul_zero_is_zero() {
        let z = Matrix::zeros(3, 3).unwrap();
        let m = Matrix::from_vec(3, 2, vec![1.0; 6]).unwrap();
        let c = z.matmul(&m).unwrap();
        assert!(c.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Matrix::zeros(2, 3).unwrap();
        let b = Matrix::zeros(2, 2).unwrap();
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("2x2"), "{msg}");
    }

    #[test]
    fn matmul_is_bit_reproducible() {
        let mut rng = crate::seeding::seeded_rng("test-matmul", &[1]);
        let a = Matrix::randn(7, 5, 1.0, &mut rng).unwrap();
        let b = Matrix::randn(5, 9, 1.0, &mut rng).unwrap();
        assert!(a.matmul(&b).unwrap().bits_eq(&a.matmul(&b).unwrap()));
    }

    #[test]
    fn softmax_rows_are_stochastic() {
        let m = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, -100.0, 0.0, 100.0]).unwrap();
        let p = m.row_softmax();
        for r in 0..2 {
            let s: f64 = p.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(p.row(r).iter().all(|v| *v > 0.0 && *v < 1.0 || *v == 1.0));
        }
    }

    #[test]
    fn normalize_handles_zero_rows() {
        let m = Matrix::from_vec(2, 2, vec![0.0, 0.0, 3.0, 4.0]).unwrap();
        let n = m.row_l2_normalize();
        assert_eq!(n.row(0), &[0.0, 0.0]);
        assert!((n.get(1, 0) - 0.6).abs() < 1e-15);
        assert!((n.get(1, 1) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Matrix::from_vec(1, 1, vec![f64::NAN]).is_err());
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let m = Matrix::from_vec(1, 3, vec![0.5, 0.5, 0.1]).unwrap();
        assert_eq!(m.row_argmax(), vec![0]);
    }

    #[test]
    fn pick_per_row_range_check() {
        let m = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.pick_per_row(&[1, 0]).unwrap().data(), &[2.0, 3.0]);
        assert!(matches!(
            m.pick_per_row(&[0, 2]),
            Err(Error::LabelOutOfRange { .. })
        ));
    }
}
