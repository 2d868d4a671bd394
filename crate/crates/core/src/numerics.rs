//! Small dense linear algebra.
//!
//! Everything in this crate works on tiny matrices (filter covariances,
//! DC Jacobians of a dozen rows, network weight blocks), so storage is a
//! plain row-major `Vec<f64>` and the only factorization is Gaussian
//! elimination with partial pivoting.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pivots smaller than this fraction of their row's largest entry are
/// treated as zero.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("matrix is singular to tolerance: pivot {pivot:e} in column {column}")]
    Singular { column: usize, pivot: f64 },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("ragged rows: row {row} has {len} entries, expected {expected}")]
    Ragged {
        row: usize,
        len: usize,
        expected: usize,
    },
}

/// Row-major dense matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Dense column vector.
#[derive(Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from row-major data. Panics if the length is wrong.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(NumericsError::Ragged {
                    row: i,
                    len: r.len(),
                    expected: cols,
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

    /// 1×n matrix holding `v` as its only row.
    pub fn row_vector(v: &[f64]) -> Self {
        Self::from_vec(1, v.len(), v.to_vec())
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

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn mat_mul(&self, other: &Matrix) -> Result<Matrix, NumericsError> {
        if self.cols != other.rows {
            return Err(NumericsError::DimensionMismatch {
                op: "mat_mul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn mat_vec(&self, v: &Vector) -> Result<Vector, NumericsError> {
        if self.cols != v.len() {
            return Err(NumericsError::DimensionMismatch {
                op: "mat_vec",
                left: self.shape(),
                right: (v.len(), 1),
            });
        }
        Ok(Vector(
            (0..self.rows)
                .map(|i| self.row(i).iter().zip(v.iter()).map(|(a, b)| a * b).sum())
                .collect(),
        ))
    }

    fn zip_with(
        &self,
        other: &Matrix,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix, NumericsError> {
        if self.shape() != other.shape() {
            return Err(NumericsError::DimensionMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, NumericsError> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, NumericsError> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    /// `(A + Aᵀ) / 2`
    pub fn symmetrize(&self) -> Result<Matrix, NumericsError> {
        Ok(self.add(&self.transpose())?.scale(0.5))
    }

    /// Outer product `a bᵀ`.
    pub fn outer(a: &Vector, b: &Vector) -> Matrix {
        let mut m = Matrix::zeros(a.len(), b.len());
        for (i, &ai) in a.iter().enumerate() {
            for (j, &bj) in b.iter().enumerate() {
                m[(i, j)] = ai * bj;
            }
        }
        m
    }

    /// Inverse via column-wise solves. Only meant for the small innovation
    /// covariances of the filter.
    pub fn inverse(&self) -> Result<Matrix, NumericsError> {
        if self.rows != self.cols {
            return Err(NumericsError::NotSquare {
                rows: self.rows,
                cols: self.cols,
            });
        }
        let n = self.rows;
        let mut inv = Matrix::zeros(n, n);
        for j in 0..n {
            let mut e = Vector::zeros(n);
            e[j] = 1.0;
            let col = solve(self, &e)?;
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        Ok(inv)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix{}x{}", self.rows, self.cols)?;
        f.debug_list().entries(self.to_rows()).finish()
    }
}

impl Vector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn add(&self, other: &Vector) -> Result<Vector, NumericsError> {
        self.check_len(other, "vector add")?;
        Ok(Vector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect()))
    }

    pub fn sub(&self, other: &Vector) -> Result<Vector, NumericsError> {
        self.check_len(other, "vector sub")?;
        Ok(Vector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()))
    }

    pub fn scale(&self, s: f64) -> Vector {
        Vector(self.0.iter().map(|a| a * s).collect())
    }

    pub fn norm2(&self) -> f64 {
        norm2(self)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    fn check_len(&self, other: &Vector, op: &'static str) -> Result<(), NumericsError> {
        if self.len() != other.len() {
            return Err(NumericsError::DimensionMismatch {
                op,
                left: (self.len(), 1),
                right: (other.len(), 1),
            });
        }
        Ok(())
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl From<&[f64]> for Vector {
    fn from(v: &[f64]) -> Self {
        Self(v.to_vec())
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.0).finish()
    }
}

/// Matrix product `a·b`.
pub fn mat_mul(a: &Matrix, b: &Matrix) -> Result<Matrix, NumericsError> {
    a.mat_mul(b)
}

/// Euclidean norm.
pub fn norm2(v: &Vector) -> f64 {
    v.0.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves `a·x = b` by Gaussian elimination with partial pivoting.
///
/// A pivot is rejected when its magnitude falls below [`PIVOT_TOLERANCE`]
/// times the largest magnitude of the corresponding original row.
pub fn solve(a: &Matrix, b: &Vector) -> Result<Vector, NumericsError> {
    let n = a.rows();
    if a.cols() != n {
        return Err(NumericsError::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    if b.len() != n {
        return Err(NumericsError::DimensionMismatch {
            op: "solve",
            left: a.shape(),
            right: (b.len(), 1),
        });
    }

    let mut m = a.data.clone();
    let mut rhs = b.0.clone();
    let mut row_scale: Vec<f64> = (0..n)
        .map(|i| a.row(i).iter().fold(0.0_f64, |acc, x| acc.max(x.abs())))
        .collect();

    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
            .expect("non-empty pivot range");
        let pivot = m[pivot_row * n + col];
        let scale = row_scale[pivot_row];
        if scale == 0.0 || pivot.abs() <= PIVOT_TOLERANCE * scale {
            return Err(NumericsError::Singular { column: col, pivot });
        }
        if pivot_row != col {
            for k in 0..n {
                m.swap(col * n + k, pivot_row * n + k);
            }
            rhs.swap(col, pivot_row);
            row_scale.swap(col, pivot_row);
        }
        for r in col + 1..n {
            let factor = m[r * n + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                m[r * n + k] -= factor * m[col * n + k];
            }
            rhs[r] -= factor * rhs[col];
        }
    }

    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let tail: f64 = (i + 1..n).map(|k| m[i * n + k] * x[k]).sum();
        x[i] = (rhs[i] - tail) / m[i * n + i];
    }
    Ok(Vector(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn identity_and_zero_products() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(Matrix::identity(2).mat_mul(&a).unwrap(), a);
        assert_eq!(Matrix::zeros(2, 2).mat_mul(&a).unwrap(), Matrix::zeros(2, 2));
    }

    #[test]
    fn hand_product() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = m(&[&[5.0], &[6.0]]);
        assert_eq!(mat_mul(&a, &b).unwrap(), m(&[&[17.0], &[39.0]]));
    }

    #[test]
    fn product_dimension_mismatch() {
        let err = mat_mul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        assert!(matches!(err, NumericsError::DimensionMismatch { .. }));
    }

    #[test]
    fn solve_cases() {
        let b = Vector::from(vec![3.0, -1.0]);
        assert_eq!(solve(&Matrix::identity(2), &b).unwrap(), b);

        let x = solve(&m(&[&[2.0, 0.0], &[0.0, 4.0]]), &Vector::from(vec![2.0, 8.0])).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 2.0]);

        let err = solve(&m(&[&[1.0, 1.0], &[1.0, 1.0]]), &Vector::from(vec![1.0, 1.0]))
            .unwrap_err();
        assert!(matches!(err, NumericsError::Singular { column: 1, .. }));
    }

    #[test]
    fn solve_needs_pivoting() {
        let a = m(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let x = solve(&a, &Vector::from(vec![2.0, 3.0])).unwrap();
        assert_eq!(x.as_slice(), &[3.0, 2.0]);
    }

    #[test]
    fn norms() {
        assert_eq!(norm2(&Vector::from(vec![0.0, 0.0])), 0.0);
        assert_eq!(norm2(&Vector::from(vec![3.0, 4.0])), 5.0);
        assert_eq!(norm2(&Vector::from(vec![-2.5])), 2.5);
    }

    #[test]
    fn inverse_of_diagonal() {
        let inv = Matrix::from_diag(&[2.0, 4.0]).inverse().unwrap();
        assert_eq!(inv, Matrix::from_diag(&[0.5, 0.25]));
    }

    fn square(n: usize) -> impl Strategy<Value = Matrix> {
        prop::collection::vec(-2.0..2.0f64, n * n).prop_map(move |d| Matrix::from_vec(n, n, d))
    }

    proptest! {
        #[test]
        fn product_is_associative(a in square(3), b in square(3), c in square(3)) {
            let left = a.mat_mul(&b).unwrap().mat_mul(&c).unwrap();
            let right = a.mat_mul(&b.mat_mul(&c).unwrap()).unwrap();
            prop_assert!(left.max_abs_diff(&right) < 1e-10);
        }

        #[test]
        fn solve_recovers_x(a in square(4), x in prop::collection::vec(-5.0..5.0f64, 4)) {
            // Diagonal dominance keeps the draw well conditioned.
            let mut a = a;
            for i in 0..4 {
                a[(i, i)] += 10.0;
            }
            let x = Vector::from(x);
            let b = a.mat_vec(&x).unwrap();
            let got = solve(&a, &b).unwrap();
            for i in 0..4 {
                prop_assert!((got[i] - x[i]).abs() < 1e-8);
            }
            let resid = a.mat_vec(&got).unwrap().sub(&b).unwrap();
            prop_assert!(resid.norm2() <= 1e-10 * b.norm2().max(1.0));
        }
    }
}
