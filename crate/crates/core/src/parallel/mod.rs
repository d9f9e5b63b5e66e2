//! Distributed-style factorization over a square worker grid. At every level
//! the workers first skeletonize their interior boxes concurrently, then their
//! boundary boxes one grid color at a time, exchanging modified blocks and
//! active lists after each phase. Level transitions hand parent data to the
//! workers of the (possibly smaller) coarser grid.

mod comm;

pub use comm::{ChannelTransport, Communicator, Envelope, Payload, Transport, WorkerCounters};

use std::collections::BTreeMap;
use std::thread;
use std::time::Instant;

use serde::Serialize;

use crate::driver::{
    factor_top, level_stats_from, parent_active, parent_block, parent_keys, proxy_count, top_level, FactorOptions,
    FactorStats, Factorization, StoreSnapshot,
};
use crate::error::{Error, Result};
use crate::geometry::{BoxId, QuadTree};
use crate::kernels::KernelMatrix;
use crate::scalar::Scalar;
use crate::skeletonization::{locality_violations, skeletonize_box, BlockKey, BlockStore, ElementaryFactor};

/// Square worker grid over one tree level. Workers own contiguous square
/// blocks of boxes. Worker ids are row-major positions in the leaf-level grid
/// and survive grid reduction unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct WorkerGrid {
    q0: usize,
    stride: usize,
    level: u32,
}

fn invalid(p: usize, reason: impl Into<String>) -> Error {
    Error::InvalidPartition {
        p,
        reason: reason.into(),
    }
}

/// Leaf-level worker grid for `p` workers.
pub fn partition_domain(tree: &QuadTree, p: usize) -> Result<WorkerGrid> {
    if p == 0 || !p.is_power_of_two() || !p.trailing_zeros().is_multiple_of(2) {
        return Err(invalid(p, "worker count must be a power of 4 (1, 4, 16, ...)"));
    }
    let q0 = 1usize << (p.trailing_zeros() / 2);
    let side = 1usize << tree.levels();
    // Sides are powers of two, so this also covers divisibility by q0.
    if p > 1 && side < 2 * q0 {
        return Err(invalid(
            p,
            format!(
                "each worker must own at least 2x2 leaf boxes; leaf grid {side}x{side} gives {0}x{0}",
                side / q0
            ),
        ));
    }
    Ok(WorkerGrid {
        q0,
        stride: 1,
        level: tree.levels(),
    })
}

impl WorkerGrid {
    pub fn level(&self) -> u32 {
        self.level
    }

    /// Workers per grid side.
    pub fn dims(&self) -> usize {
        self.q0 / self.stride
    }

    /// Number of participating workers.
    pub fn p(&self) -> usize {
        self.dims() * self.dims()
    }

    /// Workers of the leaf-level grid, participating or not.
    pub fn leaf_workers(&self) -> usize {
        self.q0 * self.q0
    }

    /// Boxes per worker side.
    pub fn block_side(&self) -> usize {
        (1usize << self.level) / self.dims()
    }

    fn id(&self, wx: usize, wy: usize) -> usize {
        wy * self.stride * self.q0 + wx * self.stride
    }

    /// Grid coordinates `(column, row)` of a participating worker.
    pub fn coords(&self, worker: usize) -> Option<(usize, usize)> {
        let (x, y) = (worker % self.q0, worker / self.q0);
        (worker < self.leaf_workers() && x % self.stride == 0 && y % self.stride == 0)
            .then(|| (x / self.stride, y / self.stride))
    }

    /// Participating worker ids, ascending.
    pub fn workers(&self) -> Vec<usize> {
        let q = self.dims();
        (0..q)
            .flat_map(|wy| (0..q).map(move |wx| (wx, wy)))
            .map(|(x, y)| self.id(x, y))
            .collect()
    }

    /// `(row mod 2) * 2 + (column mod 2)`.
    pub fn color(&self, worker: usize) -> u8 {
        let (x, y) = self.coords(worker).expect("worker participates");
        ((y % 2) * 2 + x % 2) as u8
    }

    pub fn owner(&self, b: BoxId) -> usize {
        assert_eq!(b.level, self.level, "box {b} outside the level-{} grid", self.level);
        let k = self.block_side() as u32;
        self.id((b.x / k) as usize, (b.y / k) as usize)
    }

    /// Inclusive box range `(x0, y0, x1, y1)` owned by `worker`.
    pub fn owned_rect(&self, worker: usize) -> (u32, u32, u32, u32) {
        let (x, y) = self.coords(worker).expect("worker participates");
        let k = self.block_side() as u32;
        let (x0, y0) = (x as u32 * k, y as u32 * k);
        (x0, y0, x0 + k - 1, y0 + k - 1)
    }

    /// Owned boxes in row-major order.
    pub fn owned_boxes(&self, worker: usize) -> Vec<BoxId> {
        let (x0, y0, x1, y1) = self.owned_rect(worker);
        (y0..=y1)
            .flat_map(|y| (x0..=x1).map(move |x| BoxId::new(self.level, x, y)))
            .collect()
    }

    pub fn assignment(&self) -> BTreeMap<BoxId, usize> {
        let side = 1usize << (2 * self.level);
        (0..side)
            .map(|i| BoxId::from_index(self.level, i))
            .map(|b| (b, self.owner(b)))
            .collect()
    }

    /// Chebyshev distance from `b` to the worker's block.
    fn rect_distance(&self, worker: usize, b: BoxId) -> u32 {
        let (x0, y0, x1, y1) = self.owned_rect(worker);
        let d = |v: u32, lo: u32, hi: u32| if v < lo { lo - v } else { v.saturating_sub(hi) };
        d(b.x, x0, x1).max(d(b.y, y0, y1))
    }

    /// A worker needs the active list of every box within distance 2 of its block.
    pub fn box_relevant(&self, worker: usize, b: BoxId) -> bool {
        self.rect_distance(worker, b) <= 2
    }

    /// Whether `worker` needs the current value of block `(i, j)` when
    /// `pending` lists its boxes not yet skeletonized on this level. Row
    /// owners always keep their blocks (they build the parent blocks); other
    /// workers need the block only if skeletonizing a pending box reads or
    /// writes it.
    pub fn block_needed(&self, worker: usize, pending: &[BoxId], i: BoxId, j: BoxId) -> bool {
        self.p() == 1
            || self.owner(i) == worker
            || pending
                .iter()
                .any(|b| (b.chebyshev(&i) <= 1 && b.chebyshev(&j) <= 1) || (*b == j && i.chebyshev(&j) <= 2))
    }

    /// Grid one level up. The grid halves in each direction while the level's
    /// box grid is smaller than `2 dims x 2 dims`; survivors sit at even
    /// positions of each 2x2 worker block.
    pub fn coarsen(&self) -> WorkerGrid {
        assert!(self.level > 0);
        let level = self.level - 1;
        let side = 1usize << level;
        let mut stride = self.stride;
        while self.q0 / stride > 1 && side < 2 * (self.q0 / stride) {
            stride *= 2;
        }
        WorkerGrid {
            q0: self.q0,
            stride,
            level,
        }
    }

    /// Single-worker grid on the same level, owned by worker 0.
    pub fn gathered(&self) -> WorkerGrid {
        WorkerGrid {
            q0: self.q0,
            stride: self.q0,
            level: self.level,
        }
    }

    /// Grid at a coarser or equal `level`, applying the reduction rule per level.
    pub fn at_level(&self, level: u32) -> WorkerGrid {
        assert!(level <= self.level);
        let mut g = *self;
        while g.level > level {
            g = g.coarsen();
        }
        g
    }
}

/// Interior and boundary boxes of one worker, row-major.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct BoxClasses {
    pub interior: Vec<BoxId>,
    pub boundary: Vec<BoxId>,
}

/// Splits every worker's boxes at `level` into interior boxes (all neighbors
/// on the same worker) and boundary boxes.
pub fn classify_boxes(grid: &WorkerGrid, tree: &QuadTree, level: u32) -> Result<BTreeMap<usize, BoxClasses>> {
    if level > tree.levels() || level > grid.level {
        return Err(invalid(
            grid.leaf_workers(),
            format!("level {level} is finer than the grid level {}", grid.level),
        ));
    }
    let g = grid.at_level(level);
    Ok(g.workers()
        .into_iter()
        .map(|w| {
            let mut c = BoxClasses::default();
            for b in g.owned_boxes(w) {
                if b.neighbors().iter().all(|n| g.owner(*n) == w) {
                    c.interior.push(b);
                } else {
                    c.boundary.push(b);
                }
            }
            (w, c)
        })
        .collect())
}

/// Box order per compressed level that the parallel schedule reproduces:
/// interior boxes worker by worker, then boundary boxes by color, worker and
/// row-major position.
pub fn parallel_compatible_order(tree: &QuadTree, p: usize) -> Result<BTreeMap<u32, Vec<BoxId>>> {
    let leaf_grid = partition_domain(tree, p)?;
    let mut out = BTreeMap::new();
    for level in top_level(tree) + 1..=tree.levels() {
        let g = leaf_grid.at_level(level);
        let classes = classify_boxes(&g, tree, level)?;
        let mut order: Vec<BoxId> = classes.values().flat_map(|c| c.interior.iter().copied()).collect();
        for color in 0..4 {
            for (&w, c) in &classes {
                if g.color(w) == color {
                    order.extend_from_slice(&c.boundary);
                }
            }
        }
        out.insert(level, order);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Phase {
    Interior,
    Boundary(u8),
}

/// Boxes skeletonized concurrently in one phase.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseLog {
    pub level: u32,
    pub phase: Phase,
    pub processed: Vec<(usize, BoxId)>,
}

/// Pairs of boxes on different workers within one phase whose distance is
/// at most 2.
pub fn schedule_violations(phases: &[PhaseLog]) -> Vec<(u32, BoxId, BoxId)> {
    let mut out = Vec::new();
    for ph in phases {
        for (k, &(w1, b1)) in ph.processed.iter().enumerate() {
            for &(w2, b2) in &ph.processed[k + 1..] {
                if w1 != w2 && b1.chebyshev(&b2) <= 2 {
                    out.push((ph.level, b1, b2));
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct WorkerReport {
    pub messages: usize,
    pub words: usize,
    /// Seconds inside box skeletonization and the top factorization.
    pub t_comp: f64,
    /// Seconds in exchanges, installs and level transitions.
    pub t_other: f64,
    pub boxes: usize,
    pub peak_store_scalars: usize,
    pub locality_violations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParallelOptions {
    pub factor: FactorOptions,
    pub p: usize,
    /// Keep each worker's stored blocks after every compressed level.
    pub capture_worker_stores: bool,
}

impl ParallelOptions {
    pub fn new(eps: f64, p: usize) -> Self {
        Self {
            factor: FactorOptions::new(eps),
            p,
            capture_worker_stores: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParallelReport<T> {
    pub p: usize,
    pub workers: BTreeMap<usize, WorkerReport>,
    pub phases: Vec<PhaseLog>,
    /// Cumulative counters after the last exchange of each compressed level,
    /// before its level transition.
    pub level_counters: Vec<(u32, BTreeMap<usize, WorkerCounters>)>,
    /// `(level, worker, stored blocks)` after each level's last color phase.
    pub worker_stores: Vec<(u32, usize, StoreSnapshot<T>)>,
}

#[derive(Clone, Debug)]
pub struct ParallelRun<T> {
    pub factorization: Factorization<T>,
    pub report: ParallelReport<T>,
}

struct Worker<T> {
    id: usize,
    store: BlockStore<T>,
    report: WorkerReport,
}

impl<T: Scalar> Worker<T> {
    fn new(id: usize, store: BlockStore<T>) -> Self {
        Self {
            id,
            store,
            report: WorkerReport::default(),
        }
    }

    fn note_peak(&mut self) {
        self.report.peak_store_scalars = self.report.peak_store_scalars.max(self.store.peak_scalars());
    }
}

/// Runs `f` once per worker on its own thread and joins; results follow the
/// order of `items`.
fn fork_join<W: Send, R: Send>(items: Vec<&mut W>, f: impl Fn(&mut W) -> R + Sync) -> Vec<R> {
    let f = &f;
    thread::scope(|s| {
        let handles: Vec<_> = items.into_iter().map(|w| s.spawn(move || f(w))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|e| std::panic::resume_unwind(e)))
            .collect()
    })
}

/// Sends every active list and block the worker changed since the last
/// exchange to each other participating worker that needs it; `pending` maps
/// workers to the boxes they have yet to skeletonize on this level. Returns
/// the number of messages sent.
pub fn exchange_boundary_updates<T: Scalar>(
    comm: &Communicator<T>,
    grid: &WorkerGrid,
    pending: &BTreeMap<usize, Vec<BoxId>>,
    store: &mut BlockStore<T>,
) -> Result<usize> {
    let me = store.owner();
    let level = store.level();
    let (actives, keys) = store.take_dirty();
    let others: Vec<usize> = grid.workers().into_iter().filter(|&w| w != me).collect();
    let mut sent = 0;
    for bi in actives {
        let b = store.box_id(bi);
        for &w in others.iter().filter(|&&w| grid.box_relevant(w, b)) {
            let list = store.active(b)?.to_vec();
            comm.send(
                me,
                w,
                Payload::Active {
                    level,
                    box_index: bi,
                    list,
                },
            )?;
            sent += 1;
        }
    }
    for key in keys {
        let (i, j) = (store.box_id(key.0), store.box_id(key.1));
        let needed = |w: usize| grid.block_needed(w, pending.get(&w).map_or(&[][..], Vec::as_slice), i, j);
        for &w in others.iter().filter(|&&w| needed(w)) {
            let block = store.get(i, j).expect("dirty block is stored").clone();
            comm.send(me, w, Payload::Block { level, key, block })?;
            sent += 1;
        }
    }
    Ok(sent)
}

/// Installs received data: active lists first, then blocks, each checked
/// against the local active lists.
fn install<T: Scalar>(store: &mut BlockStore<T>, incoming: Vec<Payload<T>>) -> Result<()> {
    let mut blocks = Vec::new();
    for p in incoming {
        if p.level() != store.level() {
            return Err(Error::Transport {
                worker: store.owner(),
                reason: format!("level-{} payload at level {}", p.level(), store.level()),
            });
        }
        match p {
            Payload::Active { box_index, list, .. } => {
                let b = store.box_id(box_index);
                store.restrict_active(b, list)?;
            }
            Payload::Block { key, block, .. } => blocks.push((key, block)),
        }
    }
    for (key, block) in blocks {
        store.install_block(key, block)?;
    }
    Ok(())
}

/// Drains and installs everything delivered to the store's worker.
pub fn apply_remote_updates<T: Scalar>(comm: &Communicator<T>, store: &mut BlockStore<T>) -> Result<usize> {
    let got = comm.drain(store.owner())?;
    let n = got.len();
    install(store, got.into_iter().map(|e| e.payload).collect())?;
    Ok(n)
}

fn first_error<R>(results: Vec<Result<R>>) -> Result<Vec<R>> {
    results.into_iter().collect()
}

struct Ctx<'a, T> {
    km: &'a KernelMatrix<T>,
    opts: &'a ParallelOptions,
    comm: &'a Communicator<T>,
}

impl<T: Scalar> Ctx<'_, T> {
    /// One concurrent phase: listed workers skeletonize their boxes and send
    /// updates; after the barrier every worker installs what it received.
    fn phase(
        &self,
        grid: &WorkerGrid,
        workers: &mut BTreeMap<usize, Worker<T>>,
        work: &BTreeMap<usize, Vec<BoxId>>,
        pending: &BTreeMap<usize, Vec<BoxId>>,
    ) -> Result<Vec<ElementaryFactor<T>>> {
        let busy: Vec<&mut Worker<T>> = workers.values_mut().filter(|w| work.contains_key(&w.id)).collect();
        let results = fork_join(busy, |w| -> Result<Vec<ElementaryFactor<T>>> {
            let mut out = Vec::new();
            for &b in &work[&w.id] {
                let n_proxy = proxy_count(self.km, &self.opts.factor, b);
                w.store.take_log();
                let t = Instant::now();
                let f = skeletonize_box(b, &mut w.store, self.km, self.opts.factor.eps, n_proxy)?;
                w.report.t_comp += t.elapsed().as_secs_f64();
                if self.opts.factor.check_locality {
                    w.report.locality_violations += locality_violations(b, &w.store.take_log()).len();
                }
                w.report.boxes += 1;
                out.push(f);
            }
            w.note_peak();
            let t = Instant::now();
            exchange_boundary_updates(self.comm, grid, pending, &mut w.store)?;
            w.report.t_other += t.elapsed().as_secs_f64();
            Ok(out)
        });
        let factors = first_error(results)?.into_iter().flatten().collect();
        let all: Vec<&mut Worker<T>> = workers.values_mut().collect();
        first_error(fork_join(all, |w| {
            let t = Instant::now();
            let r = apply_remote_updates(self.comm, &mut w.store);
            w.report.t_other += t.elapsed().as_secs_f64();
            r
        }))?;
        Ok(factors)
    }

    /// Builds parent data on the workers owning the children and moves it
    /// to the workers of `next` that need it.
    fn transition(
        &self,
        grid: &WorkerGrid,
        next: &WorkerGrid,
        mut workers: BTreeMap<usize, Worker<T>>,
        retired: &mut BTreeMap<usize, WorkerReport>,
    ) -> Result<BTreeMap<usize, Worker<T>>> {
        let level = next.level;
        let interior: BTreeMap<usize, Vec<BoxId>> = next
            .workers()
            .into_iter()
            .map(|w| {
                let own = next.owned_boxes(w);
                let inner = own
                    .iter()
                    .copied()
                    .filter(|b| b.neighbors().iter().all(|n| next.owner(*n) == w))
                    .collect();
                (w, inner)
            })
            .collect();
        let all: Vec<&mut Worker<T>> = workers.values_mut().collect();
        let local = first_error(fork_join(all, |w| -> Result<Vec<Payload<T>>> {
            let t = Instant::now();
            let me = w.id;
            let mut parents: Vec<BoxId> = grid.owned_boxes(me).iter().filter_map(BoxId::parent).collect();
            parents.sort();
            parents.dedup();
            let mut keep = Vec::new();
            let mut route = |payload: Payload<T>, to: Vec<usize>| -> Result<()> {
                for dst in to {
                    if dst == me {
                        keep.push(payload.clone());
                    } else {
                        self.comm.send(me, dst, payload.clone())?;
                    }
                }
                Ok(())
            };
            for &p in &parents {
                let list = parent_active(&w.store, p)?;
                let to = next
                    .workers()
                    .into_iter()
                    .filter(|&d| next.box_relevant(d, p))
                    .collect();
                route(
                    Payload::Active {
                        level,
                        box_index: p.index(),
                        list,
                    },
                    to,
                )?;
            }
            for (p, q) in parent_keys(&w.store) {
                if grid.owner(p.children()[0]) != me {
                    continue;
                }
                let block = parent_block(&w.store, self.km, p, q)?;
                let key: BlockKey = (p.index(), q.index());
                let to = next
                    .workers()
                    .into_iter()
                    .filter(|&d| next.block_needed(d, &interior[&d], p, q))
                    .collect();
                route(Payload::Block { level, key, block }, to)?;
            }
            w.report.t_other += t.elapsed().as_secs_f64();
            Ok(keep)
        }))?;
        let mut local: BTreeMap<usize, Vec<Payload<T>>> = workers.keys().copied().zip(local).collect();
        let survivors = next.workers();
        for (id, w) in std::mem::take(&mut workers) {
            if survivors.contains(&id) {
                workers.insert(id, w);
            } else {
                retired.insert(id, w.report);
            }
        }
        for w in workers.values_mut() {
            w.store = BlockStore::new(level).with_owner(w.id);
            w.store.set_logging(self.opts.factor.check_locality);
        }
        let mut pairs: Vec<(&mut Worker<T>, Vec<Payload<T>>)> = workers
            .values_mut()
            .map(|w| {
                let mine = local.remove(&w.id).unwrap_or_default();
                (w, mine)
            })
            .collect();
        let refs: Vec<&mut (&mut Worker<T>, Vec<Payload<T>>)> = pairs.iter_mut().collect();
        first_error(fork_join(refs, |(w, mine)| -> Result<()> {
            let t = Instant::now();
            let mut incoming = std::mem::take(mine);
            incoming.extend(self.comm.drain(w.id)?.into_iter().map(|e| e.payload));
            install(&mut w.store, incoming)?;
            // Owned rows are forwarded at the first exchange to whoever needs
            // them for boundary boxes.
            let owned: Vec<BlockKey> = w
                .store
                .blocks()
                .map(|(&k, _)| k)
                .filter(|&(i, _)| next.owner(BoxId::from_index(level, i)) == w.id)
                .collect();
            for k in owned {
                w.store.mark_dirty(k);
            }
            w.store.take_dirty_actives();
            w.report.t_other += t.elapsed().as_secs_f64();
            Ok(())
        }))?;
        Ok(workers)
    }
}

/// Parallel factorization with `opts.p` workers exchanging data through
/// `comm`. The result is bitwise identical to [`crate::factorize_with_order`]
/// with [`parallel_compatible_order`].
pub fn parallel_factorize<T: Scalar>(
    tree: &QuadTree,
    km: &KernelMatrix<T>,
    opts: &ParallelOptions,
    comm: &Communicator<T>,
) -> Result<ParallelRun<T>> {
    let eps = opts.factor.eps;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidTolerance(eps));
    }
    if km.n() != tree.len() {
        return Err(Error::LengthMismatch {
            expected: tree.len(),
            got: km.n(),
        });
    }
    let leaf_grid = partition_domain(tree, opts.p)?;
    if comm.workers() < opts.p {
        return Err(invalid(
            opts.p,
            format!("communicator connects only {} workers", comm.workers()),
        ));
    }
    let start = Instant::now();
    let counters0 = comm.counters();
    let leaf = tree.levels();
    let top = top_level(tree);
    let ctx = Ctx { km, opts, comm };

    let mut grid = if leaf > top { leaf_grid } else { leaf_grid.gathered() };
    let full = BlockStore::<T>::from_leaves(tree);
    let mut workers: BTreeMap<usize, Worker<T>> = grid
        .workers()
        .into_iter()
        .map(|w| {
            let mut s = BlockStore::new(leaf).with_owner(w);
            for (bi, list) in full.active_lists() {
                if grid.box_relevant(w, BoxId::from_index(leaf, bi)) {
                    s.set_active(BoxId::from_index(leaf, bi), list.clone());
                }
            }
            s.set_logging(opts.factor.check_locality);
            s.take_dirty();
            (w, Worker::new(w, s))
        })
        .collect();
    drop(full);

    let mut factors = Vec::new();
    let mut stats = FactorStats::default();
    let mut skeletons = BTreeMap::new();
    let mut phases = Vec::new();
    let mut level_counters = Vec::new();
    let mut worker_stores = Vec::new();
    let mut reports: BTreeMap<usize, WorkerReport> = BTreeMap::new();

    for level in (top + 1..=leaf).rev() {
        let classes = classify_boxes(&grid, tree, level)?;
        let boxes = crate::driver::row_major_order(level);
        let owner_store = |b: BoxId, ws: &BTreeMap<usize, Worker<T>>| -> Result<Vec<usize>> {
            Ok(ws[&grid.owner(b)].store.active(b)?.to_vec())
        };
        let mut active_total = 0;
        for &b in &boxes {
            active_total += owner_store(b, &workers)?.len();
        }

        let work: BTreeMap<usize, Vec<BoxId>> = classes.iter().map(|(&w, c)| (w, c.interior.clone())).collect();
        let pending_after = |done: Option<u8>| -> BTreeMap<usize, Vec<BoxId>> {
            classes
                .iter()
                .filter(|(&w, _)| done.is_none_or(|c| grid.color(w) > c))
                .map(|(&w, c)| (w, c.boundary.clone()))
                .collect()
        };
        phases.push(log_of(level, Phase::Interior, &work));
        factors.extend(ctx.phase(&grid, &mut workers, &work, &pending_after(None))?);
        for color in 0..4u8 {
            let work: BTreeMap<usize, Vec<BoxId>> = classes
                .iter()
                .filter(|(&w, _)| grid.color(w) == color)
                .map(|(&w, c)| (w, c.boundary.clone()))
                .collect();
            if work.is_empty() {
                continue;
            }
            phases.push(log_of(level, Phase::Boundary(color), &work));
            factors.extend(ctx.phase(&grid, &mut workers, &work, &pending_after(Some(color)))?);
        }

        let lists: Vec<Vec<usize>> = boxes.iter().map(|&b| owner_store(b, &workers)).collect::<Result<_>>()?;
        stats.levels.push(level_stats_from(level, active_total, &lists));
        skeletons.insert(level, lists);
        level_counters.push((level, comm.counters()));
        if opts.capture_worker_stores {
            for w in workers.values() {
                worker_stores.push((level, w.id, w.store.snapshot()));
            }
        }

        let next = if level - 1 > top {
            grid.coarsen()
        } else {
            grid.gathered().coarsen()
        };
        workers = ctx.transition(&grid, &next, workers, &mut reports)?;
        grid = next;
    }

    let w0 = workers.get_mut(&0).expect("worker 0 holds the top level");
    let t = Instant::now();
    let (top_indices, top_lu) = factor_top(&w0.store, km)?;
    w0.report.t_comp += t.elapsed().as_secs_f64();
    w0.note_peak();

    for w in workers.values() {
        reports.insert(w.id, w.report.clone());
    }
    let counters = comm.counters();
    for (id, r) in reports.iter_mut() {
        let c = counters.get(id).copied().unwrap_or_default();
        let c0 = counters0.get(id).copied().unwrap_or_default();
        r.messages = c.messages - c0.messages;
        r.words = c.words - c0.words;
    }

    stats.peak_store_scalars = reports.values().map(|r| r.peak_store_scalars).max().unwrap_or(0);
    stats.top_size = top_indices.len();
    stats.factor_scalars = factors.iter().map(ElementaryFactor::storage).sum::<usize>() + top_lu.storage();
    stats.locality_violations = reports.values().map(|r| r.locality_violations).sum();
    stats.t_fact = start.elapsed().as_secs_f64();

    Ok(ParallelRun {
        factorization: Factorization {
            n: tree.len(),
            eps,
            leaf_level: leaf,
            factors,
            top_indices,
            top: top_lu,
            skeletons,
            stats,
            snapshots: Vec::new(),
        },
        report: ParallelReport {
            p: opts.p,
            workers: reports,
            phases,
            level_counters,
            worker_stores,
        },
    })
}

fn log_of(level: u32, phase: Phase, work: &BTreeMap<usize, Vec<BoxId>>) -> PhaseLog {
    PhaseLog {
        level,
        phase,
        processed: work
            .iter()
            .flat_map(|(&w, bs)| bs.iter().map(move |&b| (w, b)))
            .collect(),
    }
}
