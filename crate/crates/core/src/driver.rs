//! Sequential multilevel factorization: skeletonize every box from the
//! leaves up to level 3, merging skeletons into parents between levels, then
//! factor the remaining coarse system densely.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;

use crate::dense::{LuFactors, Matrix};
use crate::error::{Error, Result};
use crate::geometry::{BoxId, QuadTree};
use crate::kernels::KernelMatrix;
use crate::scalar::{RealScalar, Scalar};
use crate::skeletonization::{locality_violations, skeletonize_box, BlockStore, ElementaryFactor};

/// Finest level that still gets compressed; coarser levels go to the dense top.
pub const FIRST_DENSE_LEVEL: u32 = 2;

/// Relative pivot threshold of the dense top-level system.
pub const TOP_PIVOT_RTOL: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub struct FactorOptions {
    pub eps: f64,
    /// Proxy count; `None` uses the kernel default per box size.
    pub n_proxy: Option<usize>,
    /// Log block accesses and count locality violations.
    pub check_locality: bool,
    /// Keep a copy of the block store after each compressed level.
    pub capture_snapshots: bool,
}

impl FactorOptions {
    pub fn new(eps: f64) -> Self {
        Self {
            eps,
            n_proxy: None,
            check_locality: false,
            capture_snapshots: false,
        }
    }
}

/// Per-level compression summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelStats {
    pub level: u32,
    pub boxes: usize,
    pub avg_active: f64,
    pub avg_rank: f64,
    pub max_rank: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FactorStats {
    pub levels: Vec<LevelStats>,
    /// Largest number of scalars held in the block store at any time.
    pub peak_store_scalars: usize,
    /// Scalars kept by the elementary factors and the top LU.
    pub factor_scalars: usize,
    pub top_size: usize,
    pub locality_violations: usize,
    pub t_fact: f64,
}

/// Stored blocks of one level, captured right after its sweep.
pub type StoreSnapshot<T> = BTreeMap<(BoxId, BoxId), Matrix<T>>;

#[derive(Clone, Debug)]
pub struct Factorization<T> {
    pub n: usize,
    pub eps: f64,
    pub leaf_level: u32,
    pub factors: Vec<ElementaryFactor<T>>,
    /// Global indices of the top system, in its row order.
    pub top_indices: Vec<usize>,
    pub top: LuFactors<T>,
    /// Skeleton lists per compressed level, by row-major box index.
    pub skeletons: BTreeMap<u32, Vec<Vec<usize>>>,
    pub stats: FactorStats,
    pub snapshots: Vec<(u32, StoreSnapshot<T>)>,
}

impl<T: Scalar> Factorization<T> {
    /// Average skeleton size per compressed level, leaf level first.
    pub fn rank_report(&self) -> Vec<(u32, f64)> {
        self.stats.levels.iter().map(|l| (l.level, l.avg_rank)).collect()
    }

    /// Bitwise equality of all factors, skeletons and the top LU.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.factors.len() == other.factors.len()
            && self.factors.iter().zip(&other.factors).all(|(a, b)| a.bitwise_eq(b))
            && self.top_indices == other.top_indices
            && self.top.perm() == other.top.perm()
            && self.top.packed().bitwise_eq(other.top.packed())
            && self.skeletons == other.skeletons
    }

    /// Checks that every index is eliminated exactly once.
    pub fn covers_each_index_once(&self) -> bool {
        let mut seen = vec![0u8; self.n];
        for i in self.factors.iter().flat_map(|f| &f.redundant).chain(&self.top_indices) {
            seen[*i] += 1;
        }
        seen.iter().all(|&c| c == 1)
    }
}

/// Proxy count for box `b`.
pub(crate) fn proxy_count<T: Scalar>(km: &KernelMatrix<T>, opts: &FactorOptions, b: BoxId) -> usize {
    opts.n_proxy
        .unwrap_or_else(|| km.kernel().default_n_proxy(b.side_length()))
}

/// Level on which the dense top system lives.
pub fn top_level(tree: &QuadTree) -> u32 {
    tree.levels().min(FIRST_DENSE_LEVEL)
}

/// Row-major box order at a level.
pub fn row_major_order(level: u32) -> Vec<BoxId> {
    (0..1usize << (2 * level))
        .map(|i| BoxId::from_index(level, i))
        .collect()
}

/// Factorization with boxes processed in row-major order at every level.
pub fn factorize<T: Scalar>(tree: &QuadTree, km: &KernelMatrix<T>, opts: &FactorOptions) -> Result<Factorization<T>> {
    factorize_with_order(tree, km, opts, &row_major_order)
}

/// Factorization with a caller-supplied box order per level; `order(level)`
/// must list every box of the level exactly once.
pub fn factorize_with_order<T: Scalar>(
    tree: &QuadTree,
    km: &KernelMatrix<T>,
    opts: &FactorOptions,
    order: &dyn Fn(u32) -> Vec<BoxId>,
) -> Result<Factorization<T>> {
    if !(opts.eps > 0.0 && opts.eps < 1.0) {
        return Err(Error::InvalidTolerance(opts.eps));
    }
    if km.n() != tree.len() {
        return Err(Error::LengthMismatch {
            expected: tree.len(),
            got: km.n(),
        });
    }
    let start = Instant::now();
    let leaf = tree.levels();
    let top = top_level(tree);
    let mut store = BlockStore::from_leaves(tree);
    store.set_logging(opts.check_locality);
    let mut factors = Vec::new();
    let mut stats = FactorStats::default();
    let mut skeletons = BTreeMap::new();
    let mut snapshots = Vec::new();
    let mut peak = 0;

    for level in (top + 1..=leaf).rev() {
        let boxes = order(level);
        let mut active_total = 0;
        for &b in &boxes {
            active_total += store.active_len(b)?;
            let n_proxy = proxy_count(km, opts, b);
            store.take_log();
            let f = skeletonize_box(b, &mut store, km, opts.eps, n_proxy)?;
            if opts.check_locality {
                stats.locality_violations += locality_violations(b, &store.take_log()).len();
            }
            factors.push(f);
        }
        let lists = current_actives(&store)?;
        stats.levels.push(level_stats_from(level, active_total, &lists));
        skeletons.insert(level, lists);
        if opts.capture_snapshots {
            snapshots.push((level, store.snapshot()));
        }
        peak = peak.max(store.peak_scalars());
        store = coarsen(&store, km)?;
        store.set_logging(opts.check_locality);
    }

    let (top_indices, top_lu) = factor_top(&store, km)?;
    peak = peak.max(store.peak_scalars());
    stats.peak_store_scalars = peak;
    stats.top_size = top_indices.len();
    stats.factor_scalars = factors.iter().map(|f| f.storage()).sum::<usize>() + top_lu.storage();
    stats.t_fact = start.elapsed().as_secs_f64();
    Ok(Factorization {
        n: tree.len(),
        eps: opts.eps,
        leaf_level: leaf,
        factors,
        top_indices,
        top: top_lu,
        skeletons,
        stats,
        snapshots,
    })
}

pub(crate) fn current_actives<T: Scalar>(store: &BlockStore<T>) -> Result<Vec<Vec<usize>>> {
    row_major_order(store.level())
        .into_iter()
        .map(|b| store.active(b).map(<[usize]>::to_vec))
        .collect()
}

pub(crate) fn level_stats_from(level: u32, active_total: usize, lists: &[Vec<usize>]) -> LevelStats {
    let boxes = lists.len();
    LevelStats {
        level,
        boxes,
        avg_active: active_total as f64 / boxes as f64,
        avg_rank: lists.iter().map(Vec::len).sum::<usize>() as f64 / boxes as f64,
        max_rank: lists.iter().map(Vec::len).max().unwrap_or(0),
    }
}

/// Active list of a parent: its children's lists concatenated in
/// SW, SE, NW, NE order.
pub(crate) fn parent_active<T: Scalar>(store: &BlockStore<T>, p: BoxId) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for c in p.children() {
        out.extend_from_slice(store.active(c)?);
    }
    Ok(out)
}

/// Parent block `(p, q)` assembled from stored child blocks, with kernel
/// blocks filling child pairs that were never modified.
pub(crate) fn parent_block<T: Scalar>(
    store: &BlockStore<T>,
    km: &KernelMatrix<T>,
    p: BoxId,
    q: BoxId,
) -> Result<Matrix<T>> {
    let pc = p.children();
    let qc = q.children();
    let rows: Vec<usize> = pc.iter().map(|&c| store.active_len(c)).collect::<Result<_>>()?;
    let cols: Vec<usize> = qc.iter().map(|&c| store.active_len(c)).collect::<Result<_>>()?;
    let mut m = Matrix::zeros(rows.iter().sum(), cols.iter().sum());
    let mut c0 = 0;
    for (j, &d) in qc.iter().enumerate() {
        let mut r0 = 0;
        for (i, &c) in pc.iter().enumerate() {
            if rows[i] > 0 && cols[j] > 0 {
                m.set_block(r0, c0, &store.peek_block(km, c, d)?);
            }
            r0 += rows[i];
        }
        c0 += cols[j];
    }
    Ok(m)
}

/// Parent keys that need a stored block: those with some stored child pair.
pub(crate) fn parent_keys<T: Scalar>(store: &BlockStore<T>) -> Vec<(BoxId, BoxId)> {
    let mut keys: Vec<(BoxId, BoxId)> = store
        .blocks()
        .map(|(&(i, j), _)| {
            (
                store.box_id(i).parent().expect("level >= 1"),
                store.box_id(j).parent().expect("level >= 1"),
            )
        })
        .collect();
    keys.sort();
    keys.dedup();
    keys
}

/// Store one level up: parents own their children's skeletons and inherit
/// every modified interaction.
pub fn coarsen<T: Scalar>(store: &BlockStore<T>, km: &KernelMatrix<T>) -> Result<BlockStore<T>> {
    let level = store.level();
    assert!(level >= 1);
    let mut next = BlockStore::new(level - 1).with_owner(store.owner());
    for p in row_major_order(level - 1) {
        next.set_active(p, parent_active(store, p)?);
    }
    for (p, q) in parent_keys(store) {
        let m = parent_block(store, km, p, q)?;
        next.install_block((p.index(), q.index()), m)?;
    }
    Ok(next)
}

/// Assembles and factors the dense system over all remaining active indices.
pub(crate) fn factor_top<T: Scalar>(store: &BlockStore<T>, km: &KernelMatrix<T>) -> Result<(Vec<usize>, LuFactors<T>)> {
    let boxes = row_major_order(store.level());
    let mut indices = Vec::new();
    let mut offsets = Vec::with_capacity(boxes.len());
    for &b in &boxes {
        offsets.push(indices.len());
        indices.extend_from_slice(store.active(b)?);
    }
    let n = indices.len();
    let mut a = Matrix::zeros(n, n);
    for (j, &q) in boxes.iter().enumerate() {
        if store.active_len(q)? == 0 {
            continue;
        }
        for (i, &p) in boxes.iter().enumerate() {
            if store.active_len(p)? == 0 {
                continue;
            }
            a.set_block(offsets[i], offsets[j], &store.peek_block(km, p, q)?);
        }
    }
    let norm = a.norm_fro();
    let lu = LuFactors::factor(a);
    if let Some(col) = lu.first_small_pivot(norm * T::Real::of(TOP_PIVOT_RTOL)) {
        return Err(Error::SingularTopSystem(col));
    }
    Ok((indices, lu))
}
