mod common;

use rskel::kernels::assemble_block;
use rskel::skeletonization::{locality_violations, AccessKind};
use rskel::{skeletonize_box, BlockStore, BoxId, ElementaryFactor, KernelMatrix, Matrix};

const N_PROXY: usize = 64;

fn scatter(dst: &mut Matrix<f64>, rows: &[usize], cols: &[usize], src: &Matrix<f64>) {
    for (j, &c) in cols.iter().enumerate() {
        for (i, &r) in rows.iter().enumerate() {
            dst[(r, c)] = src[(i, j)];
        }
    }
}

fn max_abs_sub(m: &Matrix<f64>, rows: &[usize], cols: &[usize]) -> f64 {
    let mut out = 0.0f64;
    for &c in cols {
        for &r in rows {
            out = out.max(m[(r, c)].abs());
        }
    }
    out
}

/// Dense `Q^T A Q` with the sparsification `Q = I - e_S T e_R^T`, and the
/// full step operator `W (Q^T A Q) V` built from the factor's stored pieces.
fn dense_step(a: &Matrix<f64>, f: &ElementaryFactor<f64>) -> (Matrix<f64>, Matrix<f64>) {
    let n = a.rows();
    let (r, s) = (&f.redundant, &f.skeleton);
    let mut q = Matrix::identity(n);
    scatter(&mut q, s, r, &f.interp.scaled(-1.0));
    let x = q.transpose().matmul(a).matmul(&q);

    let nr = r.len();
    let mut linv = Matrix::identity(nr);
    f.lu.lower_solve(&mut linv);
    let mut uinv = Matrix::identity(nr);
    f.lu.right_upper_solve(&mut uinv);

    let mut w = Matrix::identity(n);
    scatter(&mut w, r, r, &linv);
    scatter(&mut w, s, r, &f.e_s.matmul(&linv).scaled(-1.0));
    let mut v = Matrix::identity(n);
    scatter(&mut v, r, r, &uinv);
    scatter(&mut v, r, s, &uinv.matmul(&f.c_s).scaled(-1.0));
    for nb in &f.neighbors {
        scatter(&mut w, &nb.indices, r, &nb.e.matmul(&linv).scaled(-1.0));
        scatter(&mut v, r, &nb.indices, &uinv.matmul(&nb.c).scaled(-1.0));
    }
    let z = w.matmul(&x).matmul(&v);
    (x, z)
}

fn near_and_far(b: BoxId, km: &KernelMatrix<f64>, store: &BlockStore<f64>) -> (Vec<usize>, Vec<usize>) {
    let mut near = Vec::new();
    for c in b.neighbors() {
        near.extend_from_slice(store.active(c).unwrap());
    }
    let mut far = Vec::new();
    let side = b.side_count();
    for y in 0..side {
        for x in 0..side {
            let c = BoxId::new(b.level, x, y);
            if c.chebyshev(&b) > 1 {
                far.extend_from_slice(store.active(c).unwrap());
            }
        }
    }
    assert_eq!(near.len() + far.len() + store.active_len(b).unwrap(), km.n());
    (near, far)
}

/// One step on each of `boxes` from a fresh leaf store, checked against the
/// dense two-sided transformation. `rf_tol` bounds the sparsified R-F
/// coupling relative to the largest matrix entry.
fn check_step(n_side: usize, leaf: usize, eps: f64, boxes: &[BoxId], rf_tol: f64) {
    let (tree, km) = common::laplace(n_side, leaf);
    let a = km.dense();
    let a_max = a.max_abs();
    for &b in boxes {
        let mut store = BlockStore::from_leaves(&tree);
        let (near, far) = near_and_far(b, &km, &store);
        let f = skeletonize_box(b, &mut store, &km, eps, N_PROXY).unwrap();
        assert!(!f.redundant.is_empty(), "{b}: nothing redundant at {eps:e}");
        let (x, z) = dense_step(&a, &f);
        let (r, s) = (&f.redundant, &f.skeleton);

        // Sparsification removes the R-F coupling up to the ID tolerance.
        let rf = max_abs_sub(&x, r, &far).max(max_abs_sub(&x, &far, r));
        assert!(rf <= rf_tol * a_max, "{b}: X_RF = {:e}", rf / a_max);

        // Elimination leaves the identity on R and no coupling to S or N.
        let mut z_rr = z.select(r, r);
        z_rr.sub_assign(&Matrix::identity(r.len()));
        assert!(z_rr.max_abs() <= 1e-10, "{b}: Z_RR - I = {:e}", z_rr.max_abs());
        let sn: Vec<usize> = s.iter().chain(&near).copied().collect();
        assert!(max_abs_sub(&z, r, &sn) <= 1e-10 * a_max, "{b}: Z_R,SN");
        assert!(max_abs_sub(&z, &sn, r) <= 1e-10 * a_max, "{b}: Z_SN,R");

        // The far field is untouched and the store holds the Schur complement.
        assert_eq!(z.select(&far, &far), a.select(&far, &far));
        let near_boxes: Vec<BoxId> = std::iter::once(b).chain(b.neighbors()).collect();
        for &p in &near_boxes {
            for &q in &near_boxes {
                let (pi, qi) = (store.active(p).unwrap(), store.active(q).unwrap());
                let mut diff = store.peek_block(&km, p, q).unwrap();
                diff.sub_assign(&z.select(pi, qi));
                assert!(
                    diff.max_abs() <= 1e-10 * a_max,
                    "{b}: block ({p},{q}) off by {:e}",
                    diff.max_abs()
                );
            }
        }
    }
}

#[test]
fn one_step_reproduces_the_block_elimination_structure() {
    let boxes = [BoxId::new(2, 0, 0), BoxId::new(2, 1, 1), BoxId::new(2, 3, 2)];
    // 16-point leaves are numerically full rank at 1e-12, so N = 256 is
    // exercised at a looser tolerance with the R-F bound scaled to match.
    check_step(16, 16, 1e-6, &boxes, 10.0 * 1e-6);
    check_step(32, 64, 1e-12, &boxes, 1e-10);
}

#[test]
fn full_rank_leaves_at_tight_tolerance_are_untouched() {
    let (tree, km) = common::laplace(16, 16);
    let mut store = BlockStore::from_leaves(&tree);
    let f = skeletonize_box(BoxId::new(2, 1, 1), &mut store, &km, 1e-12, N_PROXY).unwrap();
    assert!(f.is_noop());
    assert_eq!(store.n_blocks(), 0);
}

#[test]
fn stored_blocks_stay_within_distance_two() {
    let (tree, km) = common::laplace(32, 16);
    let mut store = BlockStore::from_leaves(&tree);
    for b in [BoxId::new(3, 2, 2), BoxId::new(3, 3, 2), BoxId::new(3, 7, 7)] {
        skeletonize_box(b, &mut store, &km, 1e-6, N_PROXY).unwrap();
        for (&(i, j), m) in store.blocks() {
            let (bi, bj) = (store.box_id(i), store.box_id(j));
            assert!(bi.chebyshev(&bj) <= 2);
            assert_eq!(
                m.shape(),
                (store.active_len(bi).unwrap(), store.active_len(bj).unwrap())
            );
        }
        for f in (0..64).map(|k| BoxId::from_index(3, k)).filter(|f| f.chebyshev(&b) > 1) {
            assert!(!store.contains(b, f) && !store.contains(f, b) || f.chebyshev(&b) == 2);
            if f.chebyshev(&b) > 2 {
                assert!(!store.contains(b, f) && !store.contains(f, b));
            }
        }
    }
}

#[test]
fn access_sets_follow_the_locality_rules() {
    let (tree, km) = common::laplace(32, 16);
    let mut store = BlockStore::from_leaves(&tree);
    store.set_logging(true);
    for k in 0..64 {
        let b = BoxId::from_index(3, k);
        store.take_log();
        skeletonize_box(b, &mut store, &km, 1e-6, N_PROXY).unwrap();
        let log = store.take_log();
        assert!(locality_violations(b, &log).is_empty(), "{b}");
        let near = |c: &BoxId| c.chebyshev(&b) <= 1;
        for a in log.iter().filter(|a| a.kind == AccessKind::Write) {
            assert!(near(&a.rows) && near(&a.cols));
        }
        let m_reads = log
            .iter()
            .filter(|a| a.kind == AccessKind::Read && (a.rows.chebyshev(&b) == 2 || a.cols.chebyshev(&b) == 2))
            .count();
        assert_eq!(m_reads, 2 * b.distance2_neighbors().len(), "{b}");
    }
}

#[test]
fn locality_checker_flags_far_writes() {
    use rskel::skeletonization::Access;
    let b = BoxId::new(3, 3, 3);
    let log = [
        Access {
            kind: AccessKind::Read,
            rows: b,
            cols: BoxId::new(3, 5, 3),
        },
        Access {
            kind: AccessKind::Write,
            rows: b,
            cols: BoxId::new(3, 5, 3),
        },
        Access {
            kind: AccessKind::Read,
            rows: BoxId::new(3, 1, 3),
            cols: BoxId::new(3, 5, 3),
        },
        Access {
            kind: AccessKind::Write,
            rows: BoxId::new(3, 2, 2),
            cols: BoxId::new(3, 4, 4),
        },
    ];
    let bad = locality_violations(b, &log);
    assert_eq!(bad, vec![log[1], log[2]]);
}

#[test]
fn distant_boxes_commute_bitwise() {
    let (tree, km) = common::laplace(32, 16);
    let mut base = BlockStore::from_leaves(&tree);
    for b in [BoxId::new(3, 2, 2), BoxId::new(3, 3, 1)] {
        skeletonize_box(b, &mut base, &km, 1e-6, N_PROXY).unwrap();
    }
    for (b1, b2) in [
        (BoxId::new(3, 1, 1), BoxId::new(3, 4, 1)),
        (BoxId::new(3, 2, 3), BoxId::new(3, 5, 6)),
        (BoxId::new(3, 0, 7), BoxId::new(3, 7, 0)),
    ] {
        assert!(b1.chebyshev(&b2) > 2);
        let mut s12 = base.clone();
        let f1 = skeletonize_box(b1, &mut s12, &km, 1e-6, N_PROXY).unwrap();
        let f2 = skeletonize_box(b2, &mut s12, &km, 1e-6, N_PROXY).unwrap();
        let mut s21 = base.clone();
        let g2 = skeletonize_box(b2, &mut s21, &km, 1e-6, N_PROXY).unwrap();
        let g1 = skeletonize_box(b1, &mut s21, &km, 1e-6, N_PROXY).unwrap();
        assert!(f1.bitwise_eq(&g1) && f2.bitwise_eq(&g2));
        let (a, b) = (s12.snapshot(), s21.snapshot());
        assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
        assert!(a.iter().zip(&b).all(|((_, x), (_, y))| x.bitwise_eq(y)));
        assert_eq!(
            s12.active_lists().collect::<Vec<_>>(),
            s21.active_lists().collect::<Vec<_>>()
        );
    }
}

#[test]
fn symmetric_kernel_keeps_symmetric_blocks() {
    let (tree, km) = common::laplace(32, 16);
    let mut store = BlockStore::from_leaves(&tree);
    let b = BoxId::new(3, 3, 4);
    skeletonize_box(b, &mut store, &km, 1e-9, N_PROXY).unwrap();
    let boxes: Vec<BoxId> = std::iter::once(b).chain(b.neighbors()).collect();
    for &p in &boxes {
        for &q in &boxes {
            let pq = store.peek_block(&km, p, q).unwrap();
            let mut diff = store.peek_block(&km, q, p).unwrap().transpose();
            diff.sub_assign(&pq);
            assert!(
                diff.max_abs() <= 1e-12 * pq.max_abs().max(1e-300),
                "({p},{q}): {:e}",
                diff.max_abs()
            );
        }
    }
}

#[test]
fn nothing_redundant_is_a_no_op() {
    let (tree, km) = common::laplace(16, 4);
    let mut store = BlockStore::from_leaves(&tree);
    let before: Vec<(usize, Vec<usize>)> = store.active_lists().map(|(i, a)| (i, a.clone())).collect();
    let b = BoxId::new(3, 4, 4);
    let f = skeletonize_box(b, &mut store, &km, 1e-15, N_PROXY).unwrap();
    assert!(f.is_noop());
    assert_eq!(f.skeleton, store.active(b).unwrap());
    assert_eq!(store.n_blocks(), 0);
    let after: Vec<(usize, Vec<usize>)> = store.active_lists().map(|(i, a)| (i, a.clone())).collect();
    assert_eq!(before, after);
}

#[test]
fn reads_fall_back_to_kernel_blocks() {
    let (tree, km) = common::laplace(32, 16);
    let mut store = BlockStore::from_leaves(&tree);
    let (p, q) = (BoxId::new(3, 0, 0), BoxId::new(3, 5, 5));
    let spec = rskel::KernelSpec::laplace(1.0 / 32.0).unwrap();
    let direct = assemble_block(&spec, store.active(p).unwrap(), store.active(q).unwrap(), km.points()).unwrap();
    let first = store.read_block(&km, p, q).unwrap();
    assert!(first.bitwise_eq(&direct));
    assert!(store.read_block(&km, p, q).unwrap().bitwise_eq(&first));

    let b = BoxId::new(3, 1, 1);
    let (c, d) = (BoxId::new(3, 0, 0), BoxId::new(3, 2, 2));
    let pristine = km.block(store.active(c).unwrap(), store.active(d).unwrap());
    skeletonize_box(b, &mut store, &km, 1e-6, N_PROXY).unwrap();
    assert!(store.contains(c, d));
    let mut diff = store.read_block(&km, c, d).unwrap();
    diff.sub_assign(&pristine);
    assert!(diff.max_abs() > 0.0);
}

#[test]
fn unknown_box_is_reported() {
    let store: BlockStore<f64> = BlockStore::new(2);
    assert_eq!(
        store.active(BoxId::new(2, 1, 1)),
        Err(rskel::Error::UnknownBox(BoxId::new(2, 1, 1)))
    );
}

#[test]
fn proxy_circle_stands_in_for_the_whole_far_field() {
    let (tree, km) = common::laplace(32, 16);
    for eps in [1e-4, 1e-6, 1e-9] {
        for b in [BoxId::new(3, 0, 0), BoxId::new(3, 3, 4), BoxId::new(3, 7, 2)] {
            let mut store = BlockStore::from_leaves(&tree);
            let (_, far) = near_and_far(b, &km, &store);
            let cols = store.active(b).unwrap().to_vec();
            let f = skeletonize_box(b, &mut store, &km, eps, N_PROXY).unwrap();
            let mut res = km.block(&far, &f.redundant);
            res.sub_product(&km.block(&far, &f.skeleton), &f.interp);
            let scale = km.block(&far, &cols).norm2_estimate(20);
            let err = res.norm2_estimate(20);
            assert!(err <= 10.0 * eps * scale, "{b} at {eps:e}: {:e}", err / scale);
        }
    }
}
