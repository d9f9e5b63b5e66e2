//! One strong skeletonization step: compress a box against its far field,
//! sparsify, eliminate the redundant indices and push the Schur complement
//! into the neighbor blocks.

mod store;

pub use store::{Access, AccessKind, BlockKey, BlockStore};

use num_traits::Zero;

use crate::compression::{build_compression_matrix, interpolative_decomposition};
use crate::dense::{LuFactors, Matrix};
use crate::error::{Error, Result};
use crate::geometry::BoxId;
use crate::kernels::KernelMatrix;
use crate::scalar::{RealScalar, Scalar};

/// Relative pivot threshold below which `X_RR` counts as singular.
pub const SINGULAR_PIVOT_RTOL: f64 = 1e-14;

/// Elimination blocks coupling one neighbor box to the redundant indices.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborCoupling<T> {
    pub box_id: BoxId,
    /// The neighbor's active global indices when the factor was formed.
    pub indices: Vec<usize>,
    /// `X_{N,R} U^{-1}`.
    pub e: Matrix<T>,
    /// `L^{-1} P^T X_{R,N}`.
    pub c: Matrix<T>,
}

/// Record of one skeletonization step. Index lists are global.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementaryFactor<T> {
    pub box_id: BoxId,
    pub redundant: Vec<usize>,
    pub skeleton: Vec<usize>,
    /// `|S| x |R|`.
    pub interp: Matrix<T>,
    pub lu: LuFactors<T>,
    /// `X_{S,R} U^{-1}`.
    pub e_s: Matrix<T>,
    /// `L^{-1} P^T X_{R,S}`.
    pub c_s: Matrix<T>,
    pub neighbors: Vec<NeighborCoupling<T>>,
}

impl<T: Scalar> ElementaryFactor<T> {
    pub fn level(&self) -> u32 {
        self.box_id.level
    }

    pub fn is_noop(&self) -> bool {
        self.redundant.is_empty()
    }

    /// Scalars held by the factor.
    pub fn storage(&self) -> usize {
        self.interp.len()
            + self.lu.storage()
            + self.e_s.len()
            + self.c_s.len()
            + self.neighbors.iter().map(|n| n.e.len() + n.c.len()).sum::<usize>()
    }

    /// Equality of every index list and every stored scalar bit pattern.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.box_id == other.box_id
            && self.redundant == other.redundant
            && self.skeleton == other.skeleton
            && self.interp.bitwise_eq(&other.interp)
            && self.lu.perm() == other.lu.perm()
            && self.lu.packed().bitwise_eq(other.lu.packed())
            && self.e_s.bitwise_eq(&other.e_s)
            && self.c_s.bitwise_eq(&other.c_s)
            && self.neighbors.len() == other.neighbors.len()
            && self.neighbors.iter().zip(&other.neighbors).all(|(a, b)| {
                a.box_id == b.box_id && a.indices == b.indices && a.e.bitwise_eq(&b.e) && a.c.bitwise_eq(&b.c)
            })
    }

    fn noop(box_id: BoxId, skeleton: Vec<usize>) -> Self {
        let k = skeleton.len();
        Self {
            box_id,
            redundant: Vec::new(),
            skeleton,
            interp: Matrix::zeros(k, 0),
            lu: LuFactors::factor(Matrix::zeros(0, 0)),
            e_s: Matrix::zeros(k, 0),
            c_s: Matrix::zeros(0, k),
            neighbors: Vec::new(),
        }
    }
}

/// Skeletonizes box `b` in place. On return `b`'s active list is its
/// skeleton and the neighbor blocks carry the Schur complement update.
pub fn skeletonize_box<T: Scalar>(
    b: BoxId,
    store: &mut BlockStore<T>,
    km: &KernelMatrix<T>,
    eps: f64,
    n_proxy: usize,
) -> Result<ElementaryFactor<T>> {
    let active = store.active(b)?.to_vec();
    if active.is_empty() {
        return Ok(ElementaryFactor::noop(b, active));
    }
    let cm = build_compression_matrix(b, store, km, n_proxy)?;
    let id = interpolative_decomposition(&cm, eps)?;
    if id.redundant.is_empty() {
        return Ok(ElementaryFactor::noop(b, active));
    }
    let (rp, sp) = (&id.redundant, &id.skeleton);
    let t = &id.interp;
    let t_adj = t.adjoint();

    let mut nbrs = Vec::new();
    for c in b.neighbors() {
        if store.active_len(c)? > 0 {
            nbrs.push(c);
        }
    }

    // Sparsification.
    let a_bb = store.read_block(km, b, b)?;
    let a_ss = a_bb.select(sp, sp);
    let mut x_rs = a_bb.select(rp, sp);
    x_rs.sub_product(&t_adj, &a_ss);
    let mut x_sr = a_bb.select(sp, rp);
    x_sr.sub_product(&a_ss, t);
    let mut x_rr = a_bb.select(rp, rp);
    x_rr.sub_product(&t_adj, &a_bb.select(sp, rp));
    x_rr.sub_product(&x_rs, t);

    let mut a_bn = Vec::with_capacity(nbrs.len());
    let mut x_rn = Vec::with_capacity(nbrs.len());
    let mut x_nr = Vec::with_capacity(nbrs.len());
    let mut a_nb = Vec::with_capacity(nbrs.len());
    for &c in &nbrs {
        let bc = store.read_block(km, b, c)?;
        let mut xr = bc.select_rows(rp);
        let bc_s = bc.select_rows(sp);
        xr.sub_product(&t_adj, &bc_s);
        x_rn.push(xr);
        a_bn.push(bc_s);

        let cb = store.read_block(km, c, b)?;
        let mut xc = cb.select_cols(rp);
        let cb_s = cb.select_cols(sp);
        xc.sub_product(&cb_s, t);
        x_nr.push(xc);
        a_nb.push(cb_s);
    }

    // Elimination of R.
    let norm = x_rr.norm_fro();
    let lu = LuFactors::factor(x_rr);
    let threshold = norm * T::Real::of(SINGULAR_PIVOT_RTOL);
    let min_pivot = lu.min_pivot();
    if norm == T::Real::zero() || min_pivot < threshold {
        return Err(Error::SingularPivot(b, min_pivot.as_f64(), norm.as_f64()));
    }
    lu.right_upper_solve(&mut x_sr);
    lu.lower_solve(&mut x_rs);
    let (e_s, c_s) = (x_sr, x_rs);
    let mut e_n = x_nr;
    let mut c_n = x_rn;
    for m in &mut e_n {
        lu.right_upper_solve(m);
    }
    for m in &mut c_n {
        lu.lower_solve(m);
    }

    // Schur complement update.
    store.shrink_active(b, sp)?;
    let mut ss = a_ss;
    ss.sub_product(&e_s, &c_s);
    store.write_block(b, b, ss)?;
    for (k, &c) in nbrs.iter().enumerate() {
        let mut bc = std::mem::take(&mut a_bn[k]);
        bc.sub_product(&e_s, &c_n[k]);
        store.write_block(b, c, bc)?;
        let mut cb = std::mem::take(&mut a_nb[k]);
        cb.sub_product(&e_n[k], &c_s);
        store.write_block(c, b, cb)?;
    }
    for (i, &c) in nbrs.iter().enumerate() {
        for (j, &d) in nbrs.iter().enumerate() {
            let mut cd = store.read_block(km, c, d)?;
            cd.sub_product(&e_n[i], &c_n[j]);
            store.write_block(c, d, cd)?;
        }
    }

    let neighbors = nbrs
        .iter()
        .zip(e_n.into_iter().zip(c_n))
        .map(|(&c, (e, cm))| {
            Ok(NeighborCoupling {
                box_id: c,
                indices: store.active(c)?.to_vec(),
                e,
                c: cm,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ElementaryFactor {
        box_id: b,
        redundant: rp.iter().map(|&p| active[p]).collect(),
        skeleton: sp.iter().map(|&p| active[p]).collect(),
        interp: id.interp,
        lu,
        e_s,
        c_s,
        neighbors,
    })
}

/// Keys a box may touch: writes inside `({b} ∪ N(b))^2`, reads additionally
/// `(b, M(b))` and `(M(b), b)`. Returns the accesses that break this rule.
pub fn locality_violations(b: BoxId, log: &[Access]) -> Vec<Access> {
    let near = |c: &BoxId| c.level == b.level && b.chebyshev(c) <= 1;
    let ring2 = |c: &BoxId| c.level == b.level && b.chebyshev(c) == 2;
    log.iter()
        .filter(|a| {
            let ok_near = near(&a.rows) && near(&a.cols);
            match a.kind {
                AccessKind::Write => !ok_near,
                AccessKind::Read => {
                    let ok_far = (a.rows == b && ring2(&a.cols)) || (a.cols == b && ring2(&a.rows));
                    !(ok_near || ok_far)
                }
            }
        })
        .copied()
        .collect()
}
