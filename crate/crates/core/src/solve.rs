//! Applying a factorization as an approximate inverse, plus the exact
//! kernel matvec used as an oracle and by the Krylov solvers.

use std::thread;

use crate::dense::vec_norm;
use crate::driver::Factorization;
use crate::error::{Error, Result};
use crate::kernels::KernelMatrix;
use crate::scalar::{RealScalar, Scalar};

pub use crate::iterative::{gmres, pcg, IterResult, LinearMap};

/// Vector in global index order.
pub type SolveVector<T> = Vec<T>;

fn gather<T: Scalar>(x: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| x[i]).collect()
}

fn scatter<T: Scalar>(x: &mut [T], idx: &[usize], v: &[T]) {
    for (&i, &vi) in idx.iter().zip(v) {
        x[i] = vi;
    }
}

/// `x ≈ A^{-1} b`: upward pass over the factors, dense top solve, downward
/// pass in reverse order.
pub fn apply_inverse<T: Scalar>(f: &Factorization<T>, b: &[T]) -> Result<SolveVector<T>> {
    if b.len() != f.n {
        return Err(Error::LengthMismatch {
            expected: f.n,
            got: b.len(),
        });
    }
    let mut x = b.to_vec();
    for fac in f.factors.iter().filter(|f| !f.is_noop()) {
        let mut r = gather(&x, &fac.redundant);
        let mut s = gather(&x, &fac.skeleton);
        fac.interp.adjoint_matvec_sub(&s, &mut r);
        fac.lu.lower_solve_vec(&mut r);
        fac.e_s.matvec_sub(&r, &mut s);
        scatter(&mut x, &fac.skeleton, &s);
        for nb in &fac.neighbors {
            let mut v = gather(&x, &nb.indices);
            nb.e.matvec_sub(&r, &mut v);
            scatter(&mut x, &nb.indices, &v);
        }
        scatter(&mut x, &fac.redundant, &r);
    }

    let mut top = gather(&x, &f.top_indices);
    f.top.solve_vec(&mut top);
    scatter(&mut x, &f.top_indices, &top);

    for fac in f.factors.iter().rev().filter(|f| !f.is_noop()) {
        let mut r = gather(&x, &fac.redundant);
        let mut s = gather(&x, &fac.skeleton);
        fac.c_s.matvec_sub(&s, &mut r);
        for nb in &fac.neighbors {
            nb.c.matvec_sub(&gather(&x, &nb.indices), &mut r);
        }
        fac.lu.upper_solve_vec(&mut r);
        fac.interp.matvec_sub(&r, &mut s);
        scatter(&mut x, &fac.skeleton, &s);
        scatter(&mut x, &fac.redundant, &r);
    }
    Ok(x)
}

const MATVEC_ROW_BLOCK: usize = 64;

/// Exact `A x`, evaluated row block by row block across the available cores.
pub fn dense_matvec<T: Scalar>(km: &KernelMatrix<T>, x: &[T]) -> Result<SolveVector<T>> {
    let n = km.n();
    if x.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: x.len(),
        });
    }
    let mut y = vec![T::zero(); n];
    let workers = thread::available_parallelism()
        .map_or(1, |p| p.get())
        .min(n.div_ceil(MATVEC_ROW_BLOCK));
    let chunk = n.div_ceil(workers.max(1));
    thread::scope(|s| {
        for (c, out) in y.chunks_mut(chunk).enumerate() {
            s.spawn(move || {
                let r0 = c * chunk;
                for (k, yi) in out.iter_mut().enumerate() {
                    let i = r0 + k;
                    let mut acc = T::zero();
                    for (j, &xj) in x.iter().enumerate() {
                        acc += km.entry(i, j) * xj;
                    }
                    *yi = acc;
                }
            });
        }
    });
    Ok(y)
}

/// `||A x - b|| / ||b||` with the exact matvec.
pub fn relative_residual<T: Scalar>(km: &KernelMatrix<T>, x: &[T], b: &[T]) -> Result<f64> {
    let mut r = dense_matvec(km, x)?;
    for (ri, &bi) in r.iter_mut().zip(b) {
        *ri -= bi;
    }
    let nb = vec_norm(b).as_f64();
    Ok(if nb == 0.0 {
        vec_norm(&r).as_f64()
    } else {
        vec_norm(&r).as_f64() / nb
    })
}
