//! Dense linear algebra: row-major matrices, Cholesky factorization, SPD
//! inversion, a small pivoted LU for general square systems, and the vector
//! and matrix norms used throughout the crate.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pivots at or below this value make a matrix numerically singular.
pub const PIVOT_TOL: f64 = 1e-12;

/// Relative asymmetry above which an "SPD" input is rejected outright.
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim, dim);
        for i in 0..dim {
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

    /// Builds a matrix from row-major data, rejecting bad lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries".into()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input; intended for
    /// literals in tests and small fixed constructions.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.as_ref().len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.as_ref().len(), c, "ragged rows");
            data.extend_from_slice(row.as_ref());
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                axpy(a, other.row(k), out_row);
            }
        }
        Ok(out)
    }

    /// `self · v`
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "matvec dimension");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `selfᵀ · v`
    pub fn t_matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows, "t_matvec dimension");
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                axpy(vi, self.row(i), &mut out);
            }
        }
        out
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch("matrix difference".into()));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Returns `(M + Mᵀ)/2` for a square matrix.
    pub fn symmetrized(&self) -> Matrix {
        assert!(self.is_square());
        let n = self.rows;
        let mut s = self.clone();
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (self[(i, j)] + self[(j, i)]);
                s[(i, j)] = avg;
                s[(j, i)] = avg;
            }
        }
        s
    }

    /// Largest `|m_ij − m_ji|` relative to `‖m‖_max`.
    pub fn relative_asymmetry(&self) -> f64 {
        let scale = max_abs(self).max(f64::MIN_POSITIVE);
        let n = self.rows;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst / scale
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// A symmetric positive-definite matrix. Construction symmetrizes the input
/// and verifies that a Cholesky factorization exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdMatrix(Matrix);

impl SpdMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        let sym = symmetrize_checked(&m)?;
        cholesky_factor(&sym)?;
        Ok(Self(sym))
    }

    pub fn identity(dim: usize) -> Self {
        Self(Matrix::identity(dim))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

impl std::ops::Deref for SpdMatrix {
    type Target = Matrix;

    fn deref(&self) -> &Matrix {
        &self.0
    }
}

fn symmetrize_checked(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "SPD matrix must be square, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if m.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("SPD matrix".into()));
    }
    let asym = m.relative_asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::Asymmetric(asym));
    }
    Ok(m.symmetrized())
}

fn cholesky_factor(m: &Matrix) -> Result<Matrix> {
    let n = m.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= PIVOT_TOL || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { index: j, pivot: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Lower-triangular `L` with `L·Lᵀ = m`.
pub fn cholesky(m: &SpdMatrix) -> Result<Matrix> {
    cholesky_factor(m.matrix())
}

/// Solves `L·Lᵀ x = b` given the Cholesky factor `L`.
pub fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Inverse of an SPD matrix through its Cholesky factor.
pub fn spd_inverse(m: &SpdMatrix) -> Result<SpdMatrix> {
    let l = cholesky(m)?;
    let n = m.dim();
    let mut inv = Matrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        let col = cholesky_solve(&l, &e);
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    Ok(SpdMatrix(inv.symmetrized()))
}

/// LU factorization with partial pivoting of a general square matrix.
#[derive(Debug, Clone)]
pub struct LuFactor {
    lu: Matrix,
    perm: Vec<usize>,
}

impl LuFactor {
    pub fn new(m: &Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch("LU of non-square matrix".into()));
        }
        let n = m.rows();
        let mut lu = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = max_abs(m).max(f64::MIN_POSITIVE);
        for k in 0..n {
            let (piv_row, piv_val) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if piv_val <= PIVOT_TOL * scale {
                return Err(Error::NotPositiveDefinite {
                    index: k,
                    pivot: piv_val,
                });
            }
            if piv_row != k {
                perm.swap(k, piv_row);
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(piv_row, j)];
                    lu[(piv_row, j)] = tmp;
                }
            }
            let pivot = lu[(k, k)];
            for i in (k + 1)..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in (k + 1)..n {
                        lu[(i, j)] -= f * lu[(k, j)];
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows()
    }

    /// Solves `M x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.lu[(i, k)] * x[k];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.lu[(i, k)] * x[k];
            }
            x[i] = s / self.lu[(i, i)];
        }
        x
    }

    /// Solves `Mᵀ y = c`.
    pub fn solve_transpose(&self, c: &[f64]) -> Vec<f64> {
        let n = self.dim();
        // Mᵀ = Uᵀ Lᵀ P, so solve Uᵀ z = c, Lᵀ w = z, then y = Pᵀ w.
        let mut z = c.to_vec();
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s -= self.lu[(k, i)] * z[k];
            }
            z[i] = s / self.lu[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in (i + 1)..n {
                s -= self.lu[(k, i)] * z[k];
            }
            z[i] = s;
        }
        let mut y = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            y[p] = z[i];
        }
        y
    }
}

/// `‖m‖_max`, the largest entry magnitude.
pub fn max_abs(m: &Matrix) -> f64 {
    m.as_slice().iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
}

/// `‖v‖₁`
pub fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// `‖v‖_∞`
pub fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc: f64, x| acc.max(x.abs()))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a·x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `xᵀ M y` for a square `M`.
pub fn quad_form(x: &[f64], m: &Matrix, y: &[f64]) -> f64 {
    dot(x, &m.matvec(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn spd(rows: &[&[f64]]) -> SpdMatrix {
        SpdMatrix::new(Matrix::from_rows(rows)).unwrap()
    }

    #[test]
    fn cholesky_identity() {
        let l = cholesky(&SpdMatrix::identity(3)).unwrap();
        assert_eq!(l, Matrix::identity(3));
    }

    #[test]
    fn cholesky_two_by_two() {
        let l = cholesky(&spd(&[&[4.0, 2.0], &[2.0, 3.0]])).unwrap();
        assert_abs_diff_eq!(l[(0, 0)], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(l[(1, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(l[(1, 1)], 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(l[(0, 1)], 0.0);
    }

    #[test]
    fn cholesky_ar_half() {
        let l = cholesky(&spd(&[&[1.0, 0.5], &[0.5, 1.0]])).unwrap();
        assert_abs_diff_eq!(l[(1, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(l[(1, 1)], 0.75f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn rejects_indefinite_and_asymmetric() {
        let err = SpdMatrix::new(Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]])).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { index: 1, .. }));
        let err = SpdMatrix::new(Matrix::from_rows(&[[1.0, 0.5], [0.4, 1.0]])).unwrap_err();
        assert!(matches!(err, Error::Asymmetric(_)));
        // tiny asymmetry is symmetrized away
        let m = SpdMatrix::new(Matrix::from_rows(&[[1.0, 0.5 + 1e-12], [0.5, 1.0]])).unwrap();
        assert_eq!(m[(0, 1)], m[(1, 0)]);
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(
            spd_inverse(&SpdMatrix::identity(4)).unwrap().matrix(),
            &Matrix::identity(4)
        );
        let d = spd_inverse(&spd(&[&[2.0, 0.0], &[0.0, 4.0]])).unwrap();
        assert_abs_diff_eq!(d[(0, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d[(1, 1)], 0.25, epsilon = 1e-15);
        let a = spd_inverse(&spd(&[&[1.0, 0.5], &[0.5, 1.0]])).unwrap();
        assert_abs_diff_eq!(a[(0, 0)], 4.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(a[(0, 1)], -2.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(a[(1, 1)], 4.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn norms() {
        assert_eq!(linf(&[1.0, -3.0, 2.0]), 3.0);
        assert_eq!(l1(&[1.0, -3.0, 2.0]), 6.0);
        assert_eq!(max_abs(&Matrix::from_rows(&[[0.0, -5.0], [2.0, 1.0]])), 5.0);
    }

    #[test]
    fn lu_solves_general_system() {
        let m = Matrix::from_rows(&[[0.0, 2.0, 1.0], [1.0, 1.0, 0.0], [3.0, 0.0, 1.0]]);
        let lu = LuFactor::new(&m).unwrap();
        let x = lu.solve(&[5.0, 3.0, 6.0]);
        let back = m.matvec(&x);
        for (a, b) in back.iter().zip([5.0, 3.0, 6.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        let y = lu.solve_transpose(&[1.0, 2.0, 3.0]);
        let back = m.t_matvec(&y);
        for (a, b) in back.iter().zip([1.0, 2.0, 3.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        assert!(LuFactor::new(&Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]])).is_err());
    }

    fn random_spd(dim: usize, entries: &[f64]) -> SpdMatrix {
        let g = Matrix::from_vec(dim, dim, entries[..dim * dim].to_vec()).unwrap();
        let mut m = g.matmul(&g.transpose()).unwrap();
        for i in 0..dim {
            m[(i, i)] += 0.5;
        }
        SpdMatrix::new(m).unwrap()
    }

    proptest! {
        #[test]
        fn cholesky_reconstructs(dim in 1usize..7, entries in prop::collection::vec(-2.0f64..2.0, 49)) {
            let m = random_spd(dim, &entries);
            let l = cholesky(&m).unwrap();
            let back = l.matmul(&l.transpose()).unwrap();
            let err = max_abs(&back.sub(m.matrix()).unwrap());
            prop_assert!(err <= 1e-9 * max_abs(m.matrix()));
        }

        #[test]
        fn inverse_is_involution(dim in 1usize..7, entries in prop::collection::vec(-2.0f64..2.0, 49)) {
            let m = random_spd(dim, &entries);
            let inv = spd_inverse(&m).unwrap();
            let prod = m.matmul(inv.matrix()).unwrap();
            prop_assert!(max_abs(&prod.sub(&Matrix::identity(dim)).unwrap()) <= 1e-9 * (1.0 + max_abs(inv.matrix())));
            let back = spd_inverse(&inv).unwrap();
            prop_assert!(max_abs(&back.sub(m.matrix()).unwrap()) <= 1e-7 * max_abs(m.matrix()));
        }

        #[test]
        fn norms_match_loops(v in prop::collection::vec(-1e3f64..1e3, 0..20)) {
            let mut s = 0.0;
            let mut m = 0.0f64;
            for x in &v {
                s += x.abs();
                if x.abs() > m { m = x.abs(); }
            }
            prop_assert_eq!(l1(&v), s);
            prop_assert_eq!(linf(&v), m);
        }
    }
}
