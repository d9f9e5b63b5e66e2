//! Sparse store of modified box-pair interaction blocks for one tree level.

use std::collections::{BTreeMap, BTreeSet};

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::geometry::{BoxId, QuadTree};
use crate::kernels::KernelMatrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AccessKind {
    Read,
    Write,
}

/// One logged block access.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Access {
    pub kind: AccessKind,
    pub rows: BoxId,
    pub cols: BoxId,
}

/// Row-major box indices of a stored block.
pub type BlockKey = (usize, usize);

/// Blocks are keyed by row-major box indices at [`BlockStore::level`]; any
/// pair without a stored block is implicitly the kernel block over the two
/// boxes' active indices.
#[derive(Clone, Debug)]
pub struct BlockStore<T> {
    level: u32,
    owner: usize,
    active: Vec<Option<Vec<usize>>>,
    blocks: BTreeMap<BlockKey, Matrix<T>>,
    log: Option<Vec<Access>>,
    dirty_blocks: BTreeSet<BlockKey>,
    dirty_active: BTreeSet<usize>,
    scalars: usize,
    peak_scalars: usize,
}

impl<T: Scalar> BlockStore<T> {
    /// Empty store at `level` with every active list unknown.
    pub fn new(level: u32) -> Self {
        Self {
            level,
            owner: 0,
            active: vec![None; 1 << (2 * level)],
            blocks: BTreeMap::new(),
            log: None,
            dirty_blocks: BTreeSet::new(),
            dirty_active: BTreeSet::new(),
            scalars: 0,
            peak_scalars: 0,
        }
    }

    /// Store at the leaf level with each leaf owning its points.
    pub fn from_leaves(tree: &QuadTree) -> Self {
        let mut s = Self::new(tree.levels());
        for b in tree.leaves() {
            s.active[b.id.index()] = Some(b.owned_indices.clone());
        }
        s
    }

    /// Worker id reported in shape errors.
    pub fn with_owner(mut self, owner: usize) -> Self {
        self.owner = owner;
        self
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn box_id(&self, index: usize) -> BoxId {
        BoxId::from_index(self.level, index)
    }

    fn check_level(&self, b: BoxId) {
        assert_eq!(b.level, self.level, "box {b} queried on a level-{} store", self.level);
    }

    pub fn active(&self, b: BoxId) -> Result<&[usize]> {
        self.check_level(b);
        self.active[b.index()].as_deref().ok_or(Error::UnknownBox(b))
    }

    pub fn active_len(&self, b: BoxId) -> Result<usize> {
        self.active(b).map(<[usize]>::len)
    }

    pub fn knows(&self, b: BoxId) -> bool {
        self.check_level(b);
        self.active[b.index()].is_some()
    }

    /// Sets an active list without touching stored blocks.
    pub fn set_active(&mut self, b: BoxId, list: Vec<usize>) {
        self.check_level(b);
        self.active[b.index()] = Some(list);
    }

    /// Keeps only the given positions of `b`'s active list and trims every
    /// stored block touching `b` to match.
    pub fn shrink_active(&mut self, b: BoxId, keep: &[usize]) -> Result<()> {
        let old = self.active(b)?;
        let new: Vec<usize> = keep.iter().map(|&p| old[p]).collect();
        let bi = b.index();
        for c in b.within(2) {
            let ci = c.index();
            if let Some(m) = self.blocks.get(&(bi, ci)) {
                let trimmed = if ci == bi {
                    m.select(keep, keep)
                } else {
                    m.select_rows(keep)
                };
                self.replace((bi, ci), trimmed);
            }
            if ci != bi {
                if let Some(m) = self.blocks.get(&(ci, bi)) {
                    let trimmed = m.select_cols(keep);
                    self.replace((ci, bi), trimmed);
                }
            }
        }
        self.active[bi] = Some(new);
        self.dirty_active.insert(bi);
        Ok(())
    }

    /// Installs a remote active list that must be a subsequence of the local
    /// one (or the first list seen for `b`), trimming local blocks.
    pub fn restrict_active(&mut self, b: BoxId, list: Vec<usize>) -> Result<()> {
        self.check_level(b);
        let Some(old) = self.active[b.index()].as_ref() else {
            self.active[b.index()] = Some(list);
            return Ok(());
        };
        if *old == list {
            return Ok(());
        }
        let mut keep = Vec::with_capacity(list.len());
        let mut p = 0;
        for g in &list {
            while p < old.len() && old[p] != *g {
                p += 1;
            }
            if p == old.len() {
                return Err(Error::Transport {
                    worker: self.owner,
                    reason: format!("active list for {b} is not a subset of the local list"),
                });
            }
            keep.push(p);
            p += 1;
        }
        self.shrink_active(b, &keep)?;
        self.dirty_active.remove(&b.index());
        Ok(())
    }

    fn replace(&mut self, key: BlockKey, m: Matrix<T>) {
        let add = m.len();
        if let Some(old) = self.blocks.insert(key, m) {
            self.scalars -= old.len();
        }
        self.scalars += add;
        self.peak_scalars = self.peak_scalars.max(self.scalars);
    }

    fn expected_shape(&self, key: BlockKey) -> Result<(usize, usize)> {
        Ok((
            self.active_len(self.box_id(key.0))?,
            self.active_len(self.box_id(key.1))?,
        ))
    }

    /// Stored block, if any, without logging.
    pub fn get(&self, bi: BoxId, bj: BoxId) -> Option<&Matrix<T>> {
        self.blocks.get(&(bi.index(), bj.index()))
    }

    pub fn contains(&self, bi: BoxId, bj: BoxId) -> bool {
        self.blocks.contains_key(&(bi.index(), bj.index()))
    }

    /// Stored block or kernel block over the current active lists, unlogged.
    pub fn peek_block(&self, km: &KernelMatrix<T>, bi: BoxId, bj: BoxId) -> Result<Matrix<T>> {
        match self.get(bi, bj) {
            Some(m) => Ok(m.clone()),
            None => Ok(km.block(self.active(bi)?, self.active(bj)?)),
        }
    }

    /// Logged read of the `(bi, bj)` block.
    pub fn read_block(&mut self, km: &KernelMatrix<T>, bi: BoxId, bj: BoxId) -> Result<Matrix<T>> {
        if let Some(log) = self.log.as_mut() {
            log.push(Access {
                kind: AccessKind::Read,
                rows: bi,
                cols: bj,
            });
        }
        self.peek_block(km, bi, bj)
    }

    /// Logged write; the shape must match the current active lists.
    pub fn write_block(&mut self, bi: BoxId, bj: BoxId, m: Matrix<T>) -> Result<()> {
        let key = (bi.index(), bj.index());
        self.install_block(key, m)?;
        if let Some(log) = self.log.as_mut() {
            log.push(Access {
                kind: AccessKind::Write,
                rows: bi,
                cols: bj,
            });
        }
        self.dirty_blocks.insert(key);
        Ok(())
    }

    /// Unlogged insertion of a block received from elsewhere.
    pub fn install_block(&mut self, key: BlockKey, m: Matrix<T>) -> Result<()> {
        let expected = self.expected_shape(key)?;
        if m.shape() != expected {
            return Err(Error::ShapeMismatch {
                worker: self.owner,
                key,
                expected,
                got: m.shape(),
            });
        }
        self.replace(key, m);
        Ok(())
    }

    pub fn remove_block(&mut self, key: BlockKey) -> Option<Matrix<T>> {
        let m = self.blocks.remove(&key)?;
        self.scalars -= m.len();
        Some(m)
    }

    pub fn set_logging(&mut self, on: bool) {
        self.log = on.then(Vec::new);
    }

    /// Drains the access log (empty when logging is off).
    pub fn take_log(&mut self) -> Vec<Access> {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Drains the sets of blocks written and active lists shrunk since the
    /// previous call.
    pub fn take_dirty(&mut self) -> (Vec<usize>, Vec<BlockKey>) {
        let a = std::mem::take(&mut self.dirty_active).into_iter().collect();
        let b = std::mem::take(&mut self.dirty_blocks).into_iter().collect();
        (a, b)
    }

    /// Flags a stored block for the next [`BlockStore::take_dirty`].
    pub fn mark_dirty(&mut self, key: BlockKey) {
        if self.blocks.contains_key(&key) {
            self.dirty_blocks.insert(key);
        }
    }

    /// Clears the set of changed active lists.
    pub fn take_dirty_actives(&mut self) -> Vec<usize> {
        std::mem::take(&mut self.dirty_active).into_iter().collect()
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&BlockKey, &Matrix<T>)> {
        self.blocks.iter()
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Scalars currently held in stored blocks.
    pub fn scalar_count(&self) -> usize {
        self.scalars
    }

    pub fn peak_scalars(&self) -> usize {
        self.peak_scalars
    }

    /// Known active lists, by row-major box index.
    pub fn active_lists(&self) -> impl Iterator<Item = (usize, &Vec<usize>)> {
        self.active
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.as_ref().map(|a| (i, a)))
    }

    /// Copy of the stored blocks keyed by box pair, for comparisons.
    pub fn snapshot(&self) -> BTreeMap<(BoxId, BoxId), Matrix<T>> {
        self.blocks
            .iter()
            .map(|(&(i, j), m)| ((self.box_id(i), self.box_id(j)), m.clone()))
            .collect()
    }
}
