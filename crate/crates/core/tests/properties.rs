mod common;

use std::sync::OnceLock;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rskel::dense::{rel_diff, vec_norm};
use rskel::parallel::{classify_boxes, Payload};
use rskel::{
    apply_inverse, box_distance, factorize, interpolative_decomposition, partition_domain, skeletonize_box, BlockStore,
    BoxId, Communicator, FactorOptions, Factorization, Matrix,
};

/// `m x n` matrix of rank `k` plus entries of size `noise`.
fn low_rank(m: usize, n: usize, k: usize, noise: f64, seed: u64) -> Matrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = |r, c| Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
    let mut a = g(m, k).matmul(&g(k, n));
    a.add_assign(&g(m, n).scaled(noise));
    a
}

fn box_at(level: u32) -> impl Strategy<Value = BoxId> {
    let side = 1u32 << level;
    (0..side, 0..side).prop_map(move |(x, y)| BoxId::new(level, x, y))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn id_residual_stays_under_the_tolerance(
        m in 4usize..40,
        n in 1usize..30,
        k in 0usize..12,
        noise_exp in -14i32..-1,
        eps_exp in -12i32..-1,
        seed in any::<u64>(),
    ) {
        let a = low_rank(m, n, k, 10f64.powi(noise_exp), seed);
        let eps = 10f64.powi(eps_exp);
        let id = interpolative_decomposition(&a, eps).unwrap();
        let mut all: Vec<usize> = id.skeleton.iter().chain(&id.redundant).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(id.skeleton.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(id.rank() <= m.min(n));
        prop_assert_eq!(id.interp.shape(), (id.rank(), n - id.rank()));

        let mut res = a.select_cols(&id.redundant);
        res.sub_product(&a.select_cols(&id.skeleton), &id.interp);
        let col_max = (0..n).map(|j| vec_norm(a.col(j))).fold(0.0, f64::max);
        let slack = 1e-12 * a.norm_fro() * (m * n) as f64;
        prop_assert!(res.norm_fro() <= eps * col_max * (1.0 + 1e-8) + slack,
            "{:e} vs {:e}", res.norm_fro(), eps * col_max);
    }

    #[test]
    fn chebyshev_distance_is_a_metric(a in box_at(4), b in box_at(4), c in box_at(4)) {
        let d = |p: &BoxId, q: &BoxId| box_distance(p, q).unwrap();
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert_eq!(d(&a, &b) == 0, a == b);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        prop_assert_eq!(a.neighbors().contains(&b), d(&a, &b) == 1);
        prop_assert_eq!(a.distance2_neighbors().contains(&b), d(&a, &b) == 2);
        prop_assert_eq!(a.within(2).contains(&b), d(&a, &b) <= 2);
    }

    #[test]
    fn parents_contain_their_children(b in box_at(5)) {
        let p = b.parent().unwrap();
        prop_assert!(p.children().contains(&b));
        let [bx, by] = b.center();
        let [px, py] = p.center();
        let h = p.side_length() / 2.0;
        prop_assert!((bx - px).abs() < h && (by - py).abs() < h);
    }

    #[test]
    fn worker_grids_partition_and_color_every_level(levels in 1u32..6, p_exp in 0u32..3) {
        let p = 1usize << (2 * p_exp);
        let n_side = 1usize << (levels + 1);
        let (tree, _) = common::laplace(n_side, 4);
        prop_assume!(tree.levels() == levels);
        let Ok(leaf) = partition_domain(&tree, p) else {
            prop_assert!(p > 1 && (1usize << levels) < 2 * (1usize << p_exp));
            return Ok(());
        };
        for level in (1..=levels).rev() {
            let g = leaf.at_level(level);
            let side = 1usize << level;
            prop_assert!(g.p() == 1 || side / g.dims() >= 2);
            let owners = g.assignment();
            prop_assert_eq!(owners.len(), side * side);
            let counts = g.workers().iter().map(|&w| g.owned_boxes(w).len()).collect::<Vec<_>>();
            prop_assert!(counts.iter().all(|&c| c * g.p() == side * side));
            for (b, &w) in &owners {
                prop_assert_eq!(g.owner(*b), w);
                for n in b.neighbors() {
                    let o = g.owner(n);
                    prop_assert!(o == w || g.color(o) != g.color(w));
                }
            }
            let classes = classify_boxes(&g, &tree, level).unwrap();
            for (w, c) in &classes {
                prop_assert_eq!(c.interior.len() + c.boundary.len(), side * side / g.p());
                for b in &c.interior {
                    prop_assert!(b.neighbors().iter().all(|n| g.owner(*n) == *w));
                }
            }
        }
    }

    #[test]
    fn shrinking_keeps_stored_blocks_in_shape(
        b in box_at(3),
        keep_mask in proptest::collection::vec(any::<bool>(), 16),
    ) {
        let (tree, km) = common::laplace(32, 16);
        let mut store = BlockStore::from_leaves(&tree);
        skeletonize_box(BoxId::new(3, b.x.clamp(1, 6), b.y.clamp(1, 6)), &mut store, &km, 1e-3, 64).unwrap();
        let len = store.active_len(b).unwrap();
        let keep: Vec<usize> = (0..len).filter(|&i| keep_mask[i]).collect();
        let before = store.active(b).unwrap().to_vec();
        store.shrink_active(b, &keep).unwrap();
        let after = store.active(b).unwrap();
        prop_assert_eq!(after.to_vec(), keep.iter().map(|&i| before[i]).collect::<Vec<_>>());
        for (&(i, j), m) in store.blocks() {
            let (bi, bj) = (store.box_id(i), store.box_id(j));
            prop_assert_eq!(m.shape(), (store.active_len(bi).unwrap(), store.active_len(bj).unwrap()));
        }
    }

    #[test]
    fn counters_add_up_block_sizes(shapes in proptest::collection::vec((1usize..20, 1usize..20, 0usize..4), 0..12)) {
        let comm = Communicator::<Complex64>::channels(4);
        let mut words = [0usize; 4];
        for &(r, c, to) in &shapes {
            let from = (to + 1) % 4;
            let block = Matrix::zeros(r, c);
            comm.send(from, to, Payload::Block { level: 2, key: (0, 1), block }).unwrap();
            words[from] += 2 * r * c;
        }
        let counters = comm.counters();
        for (w, expected) in words.iter().enumerate() {
            prop_assert_eq!(counters[&w].words, *expected);
        }
        prop_assert_eq!(comm.total().messages, shapes.len());
    }
}

fn shared_factorization() -> &'static Factorization<Complex64> {
    static F: OnceLock<Factorization<Complex64>> = OnceLock::new();
    F.get_or_init(|| {
        let (tree, km) = common::helmholtz(16, 16, 12.5);
        factorize(&tree, &km, &FactorOptions::new(1e-6)).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn inverse_is_linear(s1 in any::<u64>(), s2 in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let f = shared_factorization();
        let x1: Vec<Complex64> = common::uniform(256, s1);
        let x2: Vec<Complex64> = common::uniform(256, s2);
        let (ca, cb) = (Complex64::new(a, 0.5), Complex64::new(b, -1.0));
        let mix: Vec<Complex64> = x1.iter().zip(&x2).map(|(&u, &v)| ca * u + cb * v).collect();
        let (y1, y2) = (apply_inverse(f, &x1).unwrap(), apply_inverse(f, &x2).unwrap());
        let expected: Vec<Complex64> = y1.iter().zip(&y2).map(|(&u, &v)| ca * u + cb * v).collect();
        prop_assert!(rel_diff(&apply_inverse(f, &mix).unwrap(), &expected) <= 1e-12);
    }
}
