//! Interpolative decomposition by column-pivoted QR, and the proxy-augmented
//! matrix whose column ID compresses a box against its far field.

use num_traits::{Float, One, Zero};

use crate::dense::{solve_upper_in_place, Matrix};
use crate::error::{Error, Result};
use crate::geometry::BoxId;
use crate::kernels::{proxy_points, KernelMatrix};
use crate::scalar::{RealScalar, Scalar};
use crate::skeletonization::BlockStore;

/// Power iterations used for spectral-norm estimates.
pub const NORM_ITERS: usize = 10;

/// Column ID `A[:, R] ≈ A[:, S] T`. Index lists are column positions of the
/// input matrix, both ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct IdResult<T> {
    pub skeleton: Vec<usize>,
    pub redundant: Vec<usize>,
    pub interp: Matrix<T>,
}

impl<T: Scalar> IdResult<T> {
    pub fn rank(&self) -> usize {
        self.skeleton.len()
    }

    /// `||A[:, R] - A[:, S] T||_2` relative to `||A||_2`, both estimated by
    /// power iteration (the norm of `A` also bounded below by its largest column).
    pub fn relative_residual(&self, a: &Matrix<T>) -> f64 {
        let mut res = a.select_cols(&self.redundant);
        res.sub_product(&a.select_cols(&self.skeleton), &self.interp);
        let num = res.norm2_estimate(NORM_ITERS).as_f64();
        let col_max = (0..a.cols())
            .map(|j| crate::dense::vec_norm(a.col(j)).as_f64())
            .fold(0.0, f64::max);
        let den = a.norm2_estimate(NORM_ITERS).as_f64().max(col_max);
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }
}

/// Column-pivoted Householder QR, truncated once the trailing block is
/// negligible. Returns the pivot order and the rank; `a` holds `R` in its
/// leading `rank` rows.
fn truncated_cpqr<T: Scalar>(a: &mut Matrix<T>, eps: T::Real) -> (Vec<usize>, usize) {
    let (m, n) = a.shape();
    let mut piv: Vec<usize> = (0..n).collect();
    let mut r11 = T::Real::zero();
    let mut norms = vec![T::Real::zero(); n];
    let mut v = vec![T::zero(); m];
    for k in 0..m.min(n) {
        let mut tail = T::Real::zero();
        for (j, nj) in norms.iter_mut().enumerate().skip(k) {
            *nj = a.col(j)[k..].iter().map(|x| x.abs_sqr()).sum();
            tail += *nj;
        }
        // Lowest index wins ties.
        let mut p = k;
        for j in k + 1..n {
            if norms[j] > norms[p] {
                p = j;
            }
        }
        let alpha = norms[p].sqrt();
        if k == 0 {
            r11 = alpha;
        }
        if alpha == T::Real::zero() || tail.sqrt() <= eps * r11 {
            return (piv, k);
        }
        if p != k {
            piv.swap(p, k);
            for i in 0..m {
                let t = a[(i, p)];
                a[(i, p)] = a[(i, k)];
                a[(i, k)] = t;
            }
        }

        // Householder vector for column k.
        let x0 = a[(k, k)];
        let ax0 = x0.abs();
        let phase = if ax0 == T::Real::zero() {
            T::one()
        } else {
            x0.scale(T::Real::one() / ax0)
        };
        let beta = -(phase.scale(alpha));
        let vlen = m - k;
        v[..vlen].copy_from_slice(&a.col(k)[k..]);
        v[0] -= beta;
        let vnorm2: T::Real = v[..vlen].iter().map(|x| x.abs_sqr()).sum();
        let col = a.col_mut(k);
        col[k] = beta;
        col[k + 1..].iter_mut().for_each(|x| *x = T::zero());
        if vnorm2 == T::Real::zero() {
            continue;
        }
        let two = T::Real::of(2.0) / vnorm2;
        for j in k + 1..n {
            let c = &mut a.col_mut(j)[k..];
            let mut w = T::zero();
            for (vi, ci) in v[..vlen].iter().zip(c.iter()) {
                w += vi.conj() * *ci;
            }
            let s = w.scale(two);
            for (vi, ci) in v[..vlen].iter().zip(c.iter_mut()) {
                *ci -= *vi * s;
            }
        }
    }
    (piv, m.min(n))
}

/// ID of `m` at relative tolerance `eps`.
///
/// The rank is the first `k` at which the trailing block of the pivoted QR
/// satisfies `||R22||_F <= eps |R11|`; since `|R11| <= ||A||_2` this gives
/// `||A[:,R] - A[:,S] T||_2 <= eps ||A||_2`.
pub fn interpolative_decomposition<T: Scalar>(m: &Matrix<T>, eps: f64) -> Result<IdResult<T>> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidTolerance(eps));
    }
    let n = m.cols();
    let mut r = m.clone();
    let (piv, k) = truncated_cpqr(&mut r, T::Real::of(eps));

    // T = R11^{-1} R12 in pivot order.
    let r11 = r.block(0, 0, k, k);
    let mut t = r.block(0, k, k, n - k);
    solve_upper_in_place(&r11, &mut t);

    let mut s_order: Vec<usize> = (0..k).collect();
    s_order.sort_by_key(|&i| piv[i]);
    let mut r_order: Vec<usize> = (k..n).collect();
    r_order.sort_by_key(|&i| piv[i]);
    let skeleton = s_order.iter().map(|&i| piv[i]).collect();
    let redundant = r_order.iter().map(|&i| piv[i]).collect();
    let r_cols: Vec<usize> = r_order.iter().map(|&i| i - k).collect();
    let interp = t.select(&s_order, &r_cols);
    Ok(IdResult {
        skeleton,
        redundant,
        interp,
    })
}

/// `[A_{M,B}; A_{B,M}^*; K_{P,B}; K_{B,P}^*]` for box `b`, with `M` the
/// distance-2 ring and `P` the proxy circle. Columns follow `b`'s active list.
pub fn build_compression_matrix<T: Scalar>(
    b: BoxId,
    store: &mut BlockStore<T>,
    km: &KernelMatrix<T>,
    n_proxy: usize,
) -> Result<Matrix<T>> {
    let mut parts: Vec<Matrix<T>> = Vec::new();
    for c in b.distance2_neighbors() {
        if store.active_len(c)? == 0 {
            continue;
        }
        parts.push(store.read_block(km, c, b)?);
        parts.push(store.read_block(km, b, c)?.adjoint());
    }
    let cols = store.active(b)?.to_vec();
    let proxy = proxy_points(&b, n_proxy);
    let k = km.proxy_block(&proxy.points, &cols);
    // The kernel is symmetric, so K_{B,P}^* = conj(K_{P,B}).
    let kc = k.conj();
    parts.push(k);
    parts.push(kc);
    let refs: Vec<&Matrix<T>> = parts.iter().collect();
    Ok(Matrix::vstack(&refs))
}
