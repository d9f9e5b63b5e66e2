//! Preconditioned conjugate gradients and left-preconditioned restarted GMRES.

use num_traits::{Float, One, Zero};

use crate::dense::{dot, vec_norm};
use crate::error::{Error, Result};
use crate::scalar::{RealScalar, Scalar};

/// Operator or preconditioner application.
pub type LinearMap<'a, T> = dyn FnMut(&[T]) -> Result<Vec<T>> + 'a;

#[derive(Clone, Debug, PartialEq)]
pub struct IterResult<T> {
    pub x: Vec<T>,
    pub n_it: usize,
    /// Residual measure used for stopping, relative to the right-hand side.
    pub relres: f64,
    pub converged: bool,
}

fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// PCG on `A x = b` from a zero initial guess, stopping when the recursively
/// updated residual satisfies `||r|| <= tol ||b||`.
pub fn pcg<T: Scalar>(
    matvec: &mut LinearMap<'_, T>,
    mut precond: Option<&mut LinearMap<'_, T>>,
    b: &[T],
    tol: f64,
    maxit: usize,
) -> Result<IterResult<T>> {
    let n = b.len();
    let nb = vec_norm(b).as_f64();
    let mut x = vec![T::zero(); n];
    if nb == 0.0 {
        return Ok(IterResult {
            x,
            n_it: 0,
            relres: 0.0,
            converged: true,
        });
    }
    let mut r = b.to_vec();
    let mut z = match precond.as_mut() {
        Some(m) => m(&r)?,
        None => r.clone(),
    };
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut relres = 1.0;
    for it in 1..=maxit {
        let ap = matvec(&p)?;
        let pap = dot(&p, &ap);
        if !(pap.re() > T::Real::zero()) || !(rz.re() > T::Real::zero()) {
            return Err(Error::CgBreakdown(it));
        }
        let alpha = rz / pap;
        axpy(&mut x, alpha, &p);
        axpy(&mut r, -alpha, &ap);
        relres = vec_norm(&r).as_f64() / nb;
        if relres <= tol {
            return Ok(IterResult {
                x,
                n_it: it,
                relres,
                converged: true,
            });
        }
        z = match precond.as_mut() {
            Some(m) => m(&r)?,
            None => r.clone(),
        };
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, &zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    Ok(IterResult {
        x,
        n_it: maxit,
        relres,
        converged: false,
    })
}

/// Complex-safe Givens rotation zeroing `b` in `(a, b)`.
fn givens<T: Scalar>(a: T, b: T) -> (T::Real, T) {
    let (aa, ab) = (a.abs(), b.abs());
    if ab == T::Real::zero() {
        return (T::Real::one(), T::zero());
    }
    if aa == T::Real::zero() {
        return (T::Real::zero(), T::one());
    }
    let norm = (aa * aa + ab * ab).sqrt();
    let c = aa / norm;
    let phase = a.scale(T::Real::one() / aa);
    let s = phase * b.conj().scale(T::Real::one() / norm);
    (c, s)
}

/// GMRES(`restart`) on `M A x = M b` from a zero initial guess, stopping when
/// `||M (b - A x)|| <= tol ||M b||`. `n_it` counts inner iterations over all
/// cycles.
pub fn gmres<T: Scalar>(
    matvec: &mut LinearMap<'_, T>,
    mut precond: Option<&mut LinearMap<'_, T>>,
    b: &[T],
    tol: f64,
    restart: usize,
    maxit: usize,
) -> Result<IterResult<T>> {
    let n = b.len();
    let restart = restart.max(1);
    let mut apply_m = |v: Vec<T>| -> Result<Vec<T>> {
        match precond.as_mut() {
            Some(m) => m(&v),
            None => Ok(v),
        }
    };
    let mut x = vec![T::zero(); n];
    let mb = apply_m(b.to_vec())?;
    let nmb = vec_norm(&mb).as_f64();
    if nmb == 0.0 {
        return Ok(IterResult {
            x,
            n_it: 0,
            relres: 0.0,
            converged: true,
        });
    }
    let mut r = mb;
    let mut beta = vec_norm(&r);
    let mut total = 0;
    let mut relres = beta.as_f64() / nmb;
    while total < maxit {
        let cycle_start = relres;
        let mut v: Vec<Vec<T>> = Vec::with_capacity(restart + 1);
        let inv = T::Real::one() / beta;
        v.push(r.iter().map(|x| x.scale(inv)).collect());
        let mut h: Vec<Vec<T>> = Vec::with_capacity(restart);
        let mut cs: Vec<(T::Real, T)> = Vec::with_capacity(restart);
        let mut g = vec![T::zero(); restart + 1];
        g[0] = T::from_real(beta);
        let mut k_done = 0;
        for k in 0..restart {
            if total >= maxit {
                break;
            }
            total += 1;
            let mut w = apply_m(matvec(&v[k])?)?;
            let mut hk = vec![T::zero(); k + 2];
            // Modified Gram-Schmidt.
            for (i, vi) in v.iter().enumerate() {
                let hik = dot(vi, &w);
                hk[i] = hik;
                axpy(&mut w, -hik, vi);
            }
            let wn = vec_norm(&w);
            hk[k + 1] = T::from_real(wn);
            for (i, &(c, s)) in cs.iter().enumerate() {
                let (a, bb) = (hk[i], hk[i + 1]);
                hk[i] = a.scale(c) + s * bb;
                hk[i + 1] = -(s.conj() * a) + bb.scale(c);
            }
            let (c, s) = givens(hk[k], hk[k + 1]);
            let (a, bb) = (hk[k], hk[k + 1]);
            hk[k] = a.scale(c) + s * bb;
            hk[k + 1] = T::zero();
            let gk = g[k];
            g[k] = gk.scale(c);
            g[k + 1] = -(s.conj() * gk);
            cs.push((c, s));
            h.push(hk);
            k_done = k + 1;
            relres = g[k + 1].abs().as_f64() / nmb;
            if relres <= tol || wn == T::Real::zero() {
                break;
            }
            let inv = T::Real::one() / wn;
            v.push(w.iter().map(|x| x.scale(inv)).collect());
        }

        // Back substitution for the cycle's correction.
        let mut y = vec![T::zero(); k_done];
        for i in (0..k_done).rev() {
            let mut acc = g[i];
            for j in i + 1..k_done {
                acc -= h[j][i] * y[j];
            }
            y[i] = acc / h[i][i];
        }
        for (j, &yj) in y.iter().enumerate() {
            axpy(&mut x, yj, &v[j]);
        }
        if relres <= tol {
            return Ok(IterResult {
                x,
                n_it: total,
                relres,
                converged: true,
            });
        }
        // Explicit restart residual.
        let ax = matvec(&x)?;
        let res: Vec<T> = b.iter().zip(&ax).map(|(&bi, &ai)| bi - ai).collect();
        r = apply_m(res)?;
        beta = vec_norm(&r);
        relres = beta.as_f64() / nmb;
        if relres <= tol {
            return Ok(IterResult {
                x,
                n_it: total,
                relres,
                converged: true,
            });
        }
        if k_done == restart && relres >= cycle_start {
            return Err(Error::GmresStagnation(total));
        }
    }
    Ok(IterResult {
        x,
        n_it: total,
        relres,
        converged: false,
    })
}
