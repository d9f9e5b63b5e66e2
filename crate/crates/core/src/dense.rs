//! Small dense linear algebra kernel: column-major matrices, products and
//! partially pivoted LU. Blocks handled by the factorization are at most a few
//! hundred rows, so straightforward cache-aware loops are sufficient.

use std::ops::{Index, IndexMut};

use num_traits::{Float, One, Zero};

use crate::scalar::{RealScalar, Scalar};

/// Dense column-major matrix.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_col_major(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match shape");
        Self { rows, cols, data }
    }

    /// Builds a matrix from row slices; convenient in tests.
    pub fn from_rows(rows: &[&[T]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        Self::from_fn(r, c, |i, j| rows[i][j])
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

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn col(&self, j: usize) -> &[T] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [T] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn conj(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v.conj()).collect(),
        }
    }

    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        Self::from_fn(rows.len(), cols.len(), |i, j| self[(rows[i], cols[j])])
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self::from_fn(rows.len(), self.cols, |i, j| self[(rows[i], j)])
    }

    pub fn select_cols(&self, cols: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for &j in cols {
            data.extend_from_slice(self.col(j));
        }
        Self::from_col_major(self.rows, cols.len(), data)
    }

    /// Copies `block` into `self` with its top-left corner at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Matrix<T>) {
        for j in 0..block.cols {
            let dst = &mut self.col_mut(c0 + j)[r0..r0 + block.rows];
            dst.copy_from_slice(block.col(j));
        }
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in c0..c0 + cols {
            data.extend_from_slice(&self.col(j)[r0..r0 + rows]);
        }
        Self::from_col_major(rows, cols, data)
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(parts: &[&Matrix<T>]) -> Self {
        let cols = parts.first().map_or(0, |m| m.cols);
        assert!(parts.iter().all(|m| m.cols == cols), "column count mismatch");
        let rows = parts.iter().map(|m| m.rows).sum();
        let mut out = Self::zeros(rows, cols);
        let mut r0 = 0;
        for m in parts {
            out.set_block(r0, 0, m);
            r0 += m.rows;
        }
        out
    }

    /// Places matrices with equal row counts side by side.
    pub fn hstack(parts: &[&Matrix<T>]) -> Self {
        let rows = parts.first().map_or(0, |m| m.rows);
        assert!(parts.iter().all(|m| m.rows == rows), "row count mismatch");
        let mut data = Vec::with_capacity(rows * parts.iter().map(|m| m.cols).sum::<usize>());
        for m in parts {
            data.extend_from_slice(&m.data);
        }
        let cols = parts.iter().map(|m| m.cols).sum();
        Self::from_col_major(rows, cols, data)
    }

    pub fn matmul(&self, rhs: &Matrix<T>) -> Self {
        let mut out = Self::zeros(self.rows, rhs.cols);
        gemm_acc(&mut out, T::one(), self, rhs);
        out
    }

    /// `self^* rhs` without forming the adjoint.
    pub fn adjoint_matmul(&self, rhs: &Matrix<T>) -> Self {
        assert_eq!(self.rows, rhs.rows, "inner dimension mismatch");
        let mut out = Self::zeros(self.cols, rhs.cols);
        for j in 0..rhs.cols {
            let b = rhs.col(j);
            for i in 0..self.cols {
                let a = self.col(i);
                let mut acc = T::zero();
                for k in 0..a.len() {
                    acc += a[k].conj() * b[k];
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    /// `self -= a * b`.
    pub fn sub_product(&mut self, a: &Matrix<T>, b: &Matrix<T>) {
        gemm_acc(self, -T::one(), a, b);
    }

    pub fn sub_assign(&mut self, other: &Matrix<T>) {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x -= *y;
        }
    }

    pub fn add_assign(&mut self, other: &Matrix<T>) {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += *y;
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols, "vector length mismatch");
        let mut y = vec![T::zero(); self.rows];
        for (j, &xj) in x.iter().enumerate() {
            if xj == T::zero() {
                continue;
            }
            axpy(&mut y, xj, self.col(j));
        }
        y
    }

    /// `y -= self * x`.
    pub fn matvec_sub(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.cols, "vector length mismatch");
        assert_eq!(y.len(), self.rows, "vector length mismatch");
        for (j, &xj) in x.iter().enumerate() {
            if xj == T::zero() {
                continue;
            }
            axpy(y, -xj, self.col(j));
        }
    }

    /// `y -= self^* x`.
    pub fn adjoint_matvec_sub(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.rows, "vector length mismatch");
        assert_eq!(y.len(), self.cols, "vector length mismatch");
        for (j, yj) in y.iter_mut().enumerate() {
            let c = self.col(j);
            let mut acc = T::zero();
            for k in 0..c.len() {
                acc += c[k].conj() * x[k];
            }
            *yj -= acc;
        }
    }

    pub fn norm_fro(&self) -> T::Real {
        self.data.iter().map(|v| v.abs_sqr()).sum::<T::Real>().sqrt()
    }

    pub fn max_abs(&self) -> T::Real {
        self.data.iter().map(|v| v.abs()).fold(T::Real::zero(), |a, b| a.max(b))
    }

    /// Spectral norm estimate from `iters` power iterations on `A^* A`.
    ///
    /// The start vector is the all-ones vector, so the estimate is
    /// deterministic. It is a lower bound that converges to `||A||_2`.
    pub fn norm2_estimate(&self, iters: usize) -> T::Real {
        if self.is_empty() {
            return T::Real::zero();
        }
        let mut v = vec![T::one(); self.cols];
        let mut est = T::Real::zero();
        for _ in 0..iters.max(1) {
            let nv = vec_norm(&v);
            if nv == T::Real::zero() {
                return est;
            }
            let inv = T::Real::one() / nv;
            v.iter_mut().for_each(|x| *x = x.scale(inv));
            let w = self.matvec(&v);
            est = vec_norm(&w);
            // v <- A^* w
            let mut next = vec![T::zero(); self.cols];
            self.adjoint_matvec_sub(&w, &mut next);
            v = next.into_iter().map(|x| -x).collect();
        }
        est
    }

    /// Exact comparison of IEEE bit patterns, including signed zeros.
    pub fn bitwise_eq(&self, other: &Matrix<T>) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.bit_pattern() == b.bit_pattern())
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[j * self.rows + i]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[j * self.rows + i]
    }
}

#[inline]
pub(crate) fn axpy<T: Scalar>(y: &mut [T], alpha: T, x: &[T]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn vec_norm<T: Scalar>(v: &[T]) -> T::Real {
    v.iter().map(|x| x.abs_sqr()).sum::<T::Real>().sqrt()
}

/// Conjugated inner product `<x, y> = sum conj(x_i) y_i`.
pub fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).map(|(&a, &b)| a.conj() * b).sum()
}

/// `c += alpha * a * b`.
pub fn gemm_acc<T: Scalar>(c: &mut Matrix<T>, alpha: T, a: &Matrix<T>, b: &Matrix<T>) {
    assert_eq!(a.cols, b.rows, "inner dimension mismatch");
    assert_eq!(c.rows, a.rows, "row mismatch");
    assert_eq!(c.cols, b.cols, "column mismatch");
    if a.rows == 0 {
        return;
    }
    for j in 0..b.cols {
        let (bcol_start, rows) = (j * b.rows, a.rows);
        let ccol = &mut c.data[j * rows..(j + 1) * rows];
        for k in 0..a.cols {
            let bkj = b.data[bcol_start + k];
            if bkj == T::zero() {
                continue;
            }
            axpy(ccol, alpha * bkj, &a.data[k * rows..(k + 1) * rows]);
        }
    }
}

/// Solves `U x = B` in place for an upper triangular `U` (only the upper
/// triangle is read).
pub fn solve_upper_in_place<T: Scalar>(u: &Matrix<T>, b: &mut Matrix<T>) {
    let n = u.rows;
    assert_eq!(u.cols, n);
    assert_eq!(b.rows, n);
    for j in 0..b.cols {
        let col = b.col_mut(j);
        for k in (0..n).rev() {
            col[k] /= u[(k, k)];
            let xk = col[k];
            if xk == T::zero() {
                continue;
            }
            let ucol = &u.col(k)[..k];
            for i in 0..k {
                col[i] -= ucol[i] * xk;
            }
        }
    }
}

/// LU factorization with partial (row) pivoting: `P^T A = L U`, where
/// `perm[i]` is the row of `A` moved to position `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct LuFactors<T> {
    lu: Matrix<T>,
    perm: Vec<usize>,
}

const LU_BLOCK: usize = 48;

impl<T: Scalar> LuFactors<T> {
    /// Factors a square matrix. Exactly zero pivots are left in place; use
    /// [`LuFactors::min_pivot`] to detect singularity.
    pub fn factor(mut a: Matrix<T>) -> Self {
        let n = a.rows;
        assert_eq!(n, a.cols, "LU requires a square matrix");
        let mut perm: Vec<usize> = (0..n).collect();
        let mut k0 = 0;
        while k0 < n {
            let nb = LU_BLOCK.min(n - k0);
            // Panel factorization restricted to columns k0..k0+nb; row swaps
            // are applied to the full rows.
            for k in k0..k0 + nb {
                let col = a.col(k);
                let mut p = k;
                let mut best = col[k].abs();
                for (i, v) in col.iter().enumerate().skip(k + 1) {
                    let m = v.abs();
                    if m > best {
                        best = m;
                        p = i;
                    }
                }
                if p != k {
                    perm.swap(p, k);
                    for j in 0..n {
                        a.data.swap(j * n + p, j * n + k);
                    }
                }
                let pivot = a[(k, k)];
                if pivot == T::zero() {
                    continue;
                }
                let inv = T::one() / pivot;
                for v in &mut a.col_mut(k)[k + 1..] {
                    *v *= inv;
                }
                let (left, right) = a.data.split_at_mut((k + 1) * n);
                let lcol = &left[k * n + k + 1..k * n + n];
                for j in (k + 1)..(k0 + nb) {
                    let c = &mut right[(j - k - 1) * n..(j - k) * n];
                    let ukj = c[k];
                    if ukj != T::zero() {
                        axpy(&mut c[k + 1..], -ukj, lcol);
                    }
                }
            }
            let k1 = k0 + nb;
            if k1 < n {
                // U12 <- L11^{-1} A12
                for j in k1..n {
                    for k in k0..k1 {
                        let ukj = a.data[j * n + k];
                        if ukj == T::zero() {
                            continue;
                        }
                        for i in (k + 1)..k1 {
                            let l = a.data[k * n + i];
                            a.data[j * n + i] -= l * ukj;
                        }
                    }
                }
                // A22 <- A22 - L21 U12
                let (left, right) = a.data.split_at_mut(k1 * n);
                for j in 0..(n - k1) {
                    let c = &mut right[j * n..(j + 1) * n];
                    for k in k0..k1 {
                        let ukj = c[k];
                        if ukj == T::zero() {
                            continue;
                        }
                        axpy(&mut c[k1..], -ukj, &left[k * n + k1..k * n + n]);
                    }
                }
            }
            k0 = k1;
        }
        Self { lu: a, perm }
    }

    pub fn dim(&self) -> usize {
        self.lu.rows
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Packed factors: strictly lower part holds `L` (unit diagonal), upper part `U`.
    pub fn packed(&self) -> &Matrix<T> {
        &self.lu
    }

    /// Smallest pivot modulus (infinity for an empty factorization).
    pub fn min_pivot(&self) -> T::Real {
        (0..self.dim())
            .map(|i| self.lu[(i, i)].abs())
            .fold(T::Real::infinity(), |a, b| a.min(b))
    }

    /// Index of the first pivot whose modulus does not exceed `threshold`.
    pub fn first_small_pivot(&self, threshold: T::Real) -> Option<usize> {
        (0..self.dim()).find(|&i| self.lu[(i, i)].abs() <= threshold)
    }

    /// `b <- L^{-1} P^T b`.
    pub fn lower_solve_vec(&self, b: &mut [T]) {
        let n = self.dim();
        let permuted: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        b.copy_from_slice(&permuted);
        for k in 0..n {
            let xk = b[k];
            if xk == T::zero() {
                continue;
            }
            let l = &self.lu.col(k)[k + 1..];
            for (bi, &li) in b[k + 1..].iter_mut().zip(l) {
                *bi -= li * xk;
            }
        }
    }

    /// `b <- U^{-1} b`.
    pub fn upper_solve_vec(&self, b: &mut [T]) {
        let n = self.dim();
        for k in (0..n).rev() {
            b[k] /= self.lu[(k, k)];
            let xk = b[k];
            if xk == T::zero() {
                continue;
            }
            let u = &self.lu.col(k)[..k];
            for (bi, &ui) in b[..k].iter_mut().zip(u) {
                *bi -= ui * xk;
            }
        }
    }

    pub fn solve_vec(&self, b: &mut [T]) {
        assert_eq!(b.len(), self.dim(), "vector length mismatch");
        self.lower_solve_vec(b);
        self.upper_solve_vec(b);
    }

    /// `B <- L^{-1} P^T B`.
    pub fn lower_solve(&self, b: &mut Matrix<T>) {
        assert_eq!(b.rows, self.dim());
        for j in 0..b.cols {
            self.lower_solve_vec(b.col_mut(j));
        }
    }

    /// `B <- U^{-1} B`.
    pub fn upper_solve(&self, b: &mut Matrix<T>) {
        assert_eq!(b.rows, self.dim());
        for j in 0..b.cols {
            self.upper_solve_vec(b.col_mut(j));
        }
    }

    /// `B <- A^{-1} B`.
    pub fn solve(&self, b: &mut Matrix<T>) {
        self.lower_solve(b);
        self.upper_solve(b);
    }

    /// `X <- X U^{-1}`.
    pub fn right_upper_solve(&self, x: &mut Matrix<T>) {
        let n = self.dim();
        assert_eq!(x.cols, n);
        let rows = x.rows;
        for j in 0..n {
            for k in 0..j {
                let ukj = self.lu[(k, j)];
                if ukj == T::zero() {
                    continue;
                }
                let (left, right) = x.data.split_at_mut(j * rows);
                let src = &left[k * rows..(k + 1) * rows];
                axpy(&mut right[..rows], -ukj, src);
            }
            let inv = T::one() / self.lu[(j, j)];
            for v in x.col_mut(j) {
                *v *= inv;
            }
        }
    }

    /// Number of stored scalars.
    pub fn storage(&self) -> usize {
        self.lu.len()
    }
}

/// Convenience for tests and oracles: solve `A x = b` densely.
pub fn dense_solve<T: Scalar>(a: &Matrix<T>, b: &[T]) -> Vec<T> {
    let lu = LuFactors::factor(a.clone());
    let mut x = b.to_vec();
    lu.solve_vec(&mut x);
    x
}

/// Relative difference `||x - y|| / ||y||`.
pub fn rel_diff<T: Scalar>(x: &[T], y: &[T]) -> f64 {
    let num: T::Real = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| (a - b).abs_sqr())
        .sum::<T::Real>()
        .sqrt();
    let den = vec_norm(y);
    (num / den).as_f64()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn lcg_matrix(n: usize, m: usize, seed: u64) -> Matrix<f64> {
        let mut s = seed;
        Matrix::from_fn(n, m, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
    }

    #[test]
    fn matmul_small() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Matrix::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]]);
        let c = a.matmul(&b);
        assert_eq!(c, Matrix::from_rows(&[&[19.0, 22.0], &[43.0, 50.0]]));
        assert_eq!(a.adjoint_matmul(&b), a.transpose().matmul(&b));
    }

    #[test]
    fn lu_reconstructs_across_block_boundary() {
        for n in [1, 5, 47, 48, 49, 130] {
            let a = lcg_matrix(n, n, n as u64);
            let lu = LuFactors::factor(a.clone());
            let x_true: Vec<f64> = (0..n).map(|i| (i as f64 + 1.0).sin()).collect();
            let b = a.matvec(&x_true);
            let mut x = b.clone();
            lu.solve_vec(&mut x);
            assert!(rel_diff(&x, &x_true) < 1e-10, "n = {n}");
        }
    }

    #[test]
    fn lu_pieces_compose() {
        let n = 60;
        let a = lcg_matrix(n, n, 7);
        let lu = LuFactors::factor(a.clone());
        // L^{-1} P^T A U^{-1} = I
        let mut m = a.clone();
        lu.lower_solve(&mut m);
        lu.right_upper_solve(&mut m);
        let mut err = m.clone();
        err.sub_assign(&Matrix::identity(n));
        assert!(err.max_abs() < 1e-10);
    }

    #[test]
    fn complex_lu() {
        let n = 20;
        let re = lcg_matrix(n, n, 1);
        let im = lcg_matrix(n, n, 2);
        let a = Matrix::from_fn(n, n, |i, j| Complex64::new(re[(i, j)], im[(i, j)]));
        let x_true: Vec<Complex64> = (0..n).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let b = a.matvec(&x_true);
        let x = dense_solve(&a, &b);
        assert!(rel_diff(&x, &x_true) < 1e-11);
    }

    #[test]
    fn norm2_estimate_diagonal() {
        let mut d = Matrix::<f64>::zeros(3, 3);
        d[(0, 0)] = 1.0;
        d[(1, 1)] = -5.0;
        d[(2, 2)] = 2.0;
        assert!((d.norm2_estimate(30) - 5.0).abs() < 1e-6);
    }

    #[test]
    fn stacking() {
        let a = Matrix::from_rows(&[&[1.0, 2.0]]);
        let b = Matrix::from_rows(&[&[3.0, 4.0], &[5.0, 6.0]]);
        let v = Matrix::vstack(&[&a, &b]);
        assert_eq!(v.shape(), (3, 2));
        assert_eq!(v[(2, 1)], 6.0);
        let h = Matrix::hstack(&[&b, &b.select_cols(&[1])]);
        assert_eq!(h.shape(), (2, 3));
        assert_eq!(h[(1, 2)], 6.0);
    }
}
