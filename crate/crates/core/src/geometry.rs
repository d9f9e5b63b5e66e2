//! Uniform quadtree over a cell-centered grid on the unit square.
//!
//! Boxes are addressed by `(level, x, y)` grid coordinates; row-major order
//! (`y * side + x`) is the canonical box order at every level. Since points sit
//! at cell centers and box edges coincide with grid lines, point-to-box
//! assignment is exact integer arithmetic.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
    pub global_index: usize,
}

impl Point2D {
    pub fn new(x: f64, y: f64, global_index: usize) -> Self {
        Self { x, y, global_index }
    }

    pub fn coords(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn dist(&self, other: &Point2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Address of a quadtree box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BoxId {
    pub level: u32,
    pub x: u32,
    pub y: u32,
}

impl fmt::Display for BoxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}({},{})", self.level, self.x, self.y)
    }
}

impl BoxId {
    pub fn new(level: u32, x: u32, y: u32) -> Self {
        debug_assert!(x < (1 << level) && y < (1 << level));
        Self { level, x, y }
    }

    /// Boxes per side at this box's level.
    pub fn side_count(&self) -> u32 {
        1 << self.level
    }

    /// Row-major position within the level.
    pub fn index(&self) -> usize {
        self.y as usize * self.side_count() as usize + self.x as usize
    }

    pub fn from_index(level: u32, index: usize) -> Self {
        let side = 1usize << level;
        Self::new(level, (index % side) as u32, (index / side) as u32)
    }

    pub fn side_length(&self) -> f64 {
        1.0 / self.side_count() as f64
    }

    pub fn center(&self) -> [f64; 2] {
        let l = self.side_length();
        [(self.x as f64 + 0.5) * l, (self.y as f64 + 0.5) * l]
    }

    pub fn parent(&self) -> Option<BoxId> {
        (self.level > 0).then(|| BoxId::new(self.level - 1, self.x / 2, self.y / 2))
    }

    /// Children in SW, SE, NW, NE order.
    pub fn children(&self) -> [BoxId; 4] {
        let (l, x, y) = (self.level + 1, 2 * self.x, 2 * self.y);
        [
            BoxId::new(l, x, y),
            BoxId::new(l, x + 1, y),
            BoxId::new(l, x, y + 1),
            BoxId::new(l, x + 1, y + 1),
        ]
    }

    /// Chebyshev distance in units of the box side. Panics on a level mismatch;
    /// see [`box_distance`] for the checked form.
    pub fn chebyshev(&self, other: &BoxId) -> u32 {
        assert_eq!(self.level, other.level, "boxes on different levels");
        self.x.abs_diff(other.x).max(self.y.abs_diff(other.y))
    }

    /// Same-level boxes at exactly Chebyshev distance `d`, in row-major order.
    pub fn ring(&self, d: u32) -> Vec<BoxId> {
        let side = self.side_count() as i64;
        let d = d as i64;
        let mut out = Vec::new();
        for y in (self.y as i64 - d)..=(self.y as i64 + d) {
            for x in (self.x as i64 - d)..=(self.x as i64 + d) {
                if x < 0 || y < 0 || x >= side || y >= side {
                    continue;
                }
                let cheb = (x - self.x as i64).abs().max((y - self.y as i64).abs());
                if cheb == d {
                    out.push(BoxId::new(self.level, x as u32, y as u32));
                }
            }
        }
        out
    }

    /// Adjacent boxes, `N(B)`.
    pub fn neighbors(&self) -> Vec<BoxId> {
        self.ring(1)
    }

    /// Distance-2 neighbors `M(B) = N(N(B)) \ (N(B) ∪ B)`.
    pub fn distance2_neighbors(&self) -> Vec<BoxId> {
        self.ring(2)
    }

    /// All same-level boxes within Chebyshev distance `d` (including `self`).
    pub fn within(&self, d: u32) -> Vec<BoxId> {
        let side = self.side_count();
        let x0 = self.x.saturating_sub(d);
        let y0 = self.y.saturating_sub(d);
        let x1 = (self.x + d).min(side - 1);
        let y1 = (self.y + d).min(side - 1);
        let mut out = Vec::with_capacity(((x1 - x0 + 1) * (y1 - y0 + 1)) as usize);
        for y in y0..=y1 {
            for x in x0..=x1 {
                out.push(BoxId::new(self.level, x, y));
            }
        }
        out
    }
}

/// Checked Chebyshev distance between two boxes of the same level.
pub fn box_distance(a: &BoxId, b: &BoxId) -> Result<u32> {
    if a.level != b.level {
        return Err(Error::LevelMismatch(*a, *b));
    }
    Ok(a.chebyshev(b))
}

/// A materialized quadtree box.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadBox {
    pub id: BoxId,
    pub side_length: f64,
    pub center: [f64; 2],
    /// Global indices of the points physically inside the box, ascending.
    pub owned_indices: Vec<usize>,
}

/// `n_side x n_side` cell-centered grid with row-major global indices.
pub fn make_grid(n_side: usize) -> Result<Vec<Point2D>> {
    if n_side < 2 || !n_side.is_power_of_two() {
        return Err(Error::InvalidGridSide(n_side));
    }
    let h = 1.0 / n_side as f64;
    let mut pts = Vec::with_capacity(n_side * n_side);
    for j in 0..n_side {
        for i in 0..n_side {
            pts.push(Point2D::new((i as f64 + 0.5) * h, (j as f64 + 0.5) * h, j * n_side + i));
        }
    }
    Ok(pts)
}

/// Perfect quadtree over a uniform grid.
#[derive(Clone, Debug)]
pub struct QuadTree {
    levels: u32,
    n_side: usize,
    points: Vec<Point2D>,
    boxes_by_level: Vec<Vec<QuadBox>>,
}

impl QuadTree {
    /// Builds the shallowest tree whose leaves hold at most `leaf_target` points.
    pub fn build(points: Vec<Point2D>, leaf_target: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        if leaf_target == 0 {
            return Err(Error::InvalidLeafTarget);
        }
        let n = points.len();
        let n_side = (n as f64).sqrt().round() as usize;
        if n_side * n_side != n || !n_side.is_power_of_two() {
            return Err(Error::InvalidGridSide(n_side));
        }
        let max_level = n_side.trailing_zeros();
        let mut levels = 0u32;
        while levels < max_level && (n >> (2 * levels)) > leaf_target {
            levels += 1;
        }

        let cells: Vec<(usize, usize)> = points
            .iter()
            .map(|p| {
                let i = ((p.x * n_side as f64).floor() as usize).min(n_side - 1);
                let j = ((p.y * n_side as f64).floor() as usize).min(n_side - 1);
                (i, j)
            })
            .collect();

        let mut boxes_by_level = Vec::with_capacity(levels as usize + 1);
        for level in 0..=levels {
            let side = 1usize << level;
            let shift = max_level - level;
            let mut owned = vec![Vec::new(); side * side];
            for (p, &(i, j)) in points.iter().zip(&cells) {
                owned[(j >> shift) * side + (i >> shift)].push(p.global_index);
            }
            let boxes = owned
                .into_iter()
                .enumerate()
                .map(|(idx, mut owned_indices)| {
                    owned_indices.sort_unstable();
                    let id = BoxId::from_index(level, idx);
                    QuadBox {
                        id,
                        side_length: id.side_length(),
                        center: id.center(),
                        owned_indices,
                    }
                })
                .collect();
            boxes_by_level.push(boxes);
        }

        Ok(Self {
            levels,
            n_side,
            points,
            boxes_by_level,
        })
    }

    /// Leaf level `L` (the root is level 0).
    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn n_side(&self) -> usize {
        self.n_side
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point2D] {
        &self.points
    }

    pub fn boxes(&self, level: u32) -> &[QuadBox] {
        &self.boxes_by_level[level as usize]
    }

    pub fn get(&self, id: BoxId) -> &QuadBox {
        &self.boxes_by_level[id.level as usize][id.index()]
    }

    pub fn leaves(&self) -> &[QuadBox] {
        self.boxes(self.levels)
    }

    pub fn neighbors(&self, b: BoxId) -> Vec<BoxId> {
        b.neighbors()
    }

    pub fn distance2_neighbors(&self, b: BoxId) -> Vec<BoxId> {
        b.distance2_neighbors()
    }

    /// Ownership at `level - 1` after every level-`level` box keeps only its
    /// skeleton: each parent owns its children's skeletons concatenated in
    /// SW, SE, NW, NE order. The result is indexed row-major.
    pub fn merge_to_parent(&self, level: u32, skeletons: &BTreeMap<BoxId, Vec<usize>>) -> Result<Vec<Vec<usize>>> {
        assert!(level >= 1 && level <= self.levels, "level out of range");
        let side = 1usize << (level - 1);
        let mut by_index: Vec<Option<&Vec<usize>>> = vec![None; 1 << (2 * level)];
        for (id, s) in skeletons {
            if id.level == level {
                by_index[id.index()] = Some(s);
            }
        }
        (0..side * side)
            .map(|p| {
                let parent = BoxId::from_index(level - 1, p);
                let mut owned = Vec::new();
                for c in parent.children() {
                    let s = by_index[c.index()].ok_or(Error::MissingSkeleton(c))?;
                    owned.extend_from_slice(s);
                }
                Ok(owned)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_side_two() {
        let g = make_grid(2).unwrap();
        let coords: Vec<(f64, f64)> = g.iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(coords, vec![(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)]);
        assert_eq!(g.iter().map(|p| p.global_index).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn grid_side_four_extent() {
        let g = make_grid(4).unwrap();
        assert_eq!(g.len(), 16);
        let min = g.iter().map(|p| p.x.min(p.y)).fold(f64::INFINITY, f64::min);
        let max = g.iter().map(|p| p.x.max(p.y)).fold(0.0, f64::max);
        assert_eq!(min, 0.125);
        assert_eq!(max, 0.875);
    }

    #[test]
    fn grid_side_64_distinct_with_spacing() {
        let g = make_grid(64).unwrap();
        assert_eq!(g.len(), 4096);
        let mut keys: Vec<(u64, u64)> = g.iter().map(|p| (p.x.to_bits(), p.y.to_bits())).collect();
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), 4096);
        // Horizontal spacing between consecutive points in a row.
        for w in g.windows(2).filter(|w| w[0].y == w[1].y) {
            assert!((w[1].x - w[0].x - 1.0 / 64.0).abs() < 1e-15);
        }
    }

    #[test]
    fn grid_rejects_bad_sides() {
        assert_eq!(make_grid(3), Err(Error::InvalidGridSide(3)));
        assert_eq!(make_grid(1), Err(Error::InvalidGridSide(1)));
        assert_eq!(make_grid(0), Err(Error::InvalidGridSide(0)));
    }

    #[test]
    fn tree_depths() {
        let t = QuadTree::build(make_grid(64).unwrap(), 64).unwrap();
        assert_eq!(t.levels(), 3);
        assert!(t.leaves().iter().all(|b| b.owned_indices.len() == 64));

        let t = QuadTree::build(make_grid(4).unwrap(), 1).unwrap();
        assert_eq!(t.levels(), 2);
        assert!(t.leaves().iter().all(|b| b.owned_indices.len() == 1));

        let t = QuadTree::build(make_grid(64).unwrap(), 16).unwrap();
        assert_eq!(t.levels(), 4);
        assert_eq!(t.leaves().len(), 256);
        assert!(t.leaves().iter().all(|b| b.owned_indices.len() == 16));

        let t = QuadTree::build(make_grid(4).unwrap(), 16).unwrap();
        assert_eq!(t.levels(), 0);
    }

    #[test]
    fn tree_rejects_empty() {
        assert_eq!(QuadTree::build(vec![], 4).unwrap_err(), Error::EmptyPointSet);
    }

    #[test]
    fn leaves_partition_points() {
        let t = QuadTree::build(make_grid(32).unwrap(), 8).unwrap();
        let mut all: Vec<usize> = t.leaves().iter().flat_map(|b| b.owned_indices.clone()).collect();
        assert_eq!(all.len(), 1024);
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 1024);
        // Points physically inside their box.
        for b in t.leaves() {
            for &i in &b.owned_indices {
                let p = t.points()[i];
                assert!((p.x - b.center[0]).abs() < b.side_length / 2.0);
                assert!((p.y - b.center[1]).abs() < b.side_length / 2.0);
            }
        }
    }

    #[test]
    fn neighbor_counts() {
        let c = BoxId::new(3, 4, 4);
        assert_eq!(c.neighbors().len(), 8);
        assert_eq!(BoxId::new(3, 0, 0).neighbors().len(), 3);
        assert_eq!(BoxId::new(3, 3, 0).neighbors().len(), 5);
        assert_eq!(c.distance2_neighbors().len(), 16);
        for i in 0..4 {
            assert!(BoxId::from_index(1, i).distance2_neighbors().is_empty());
        }
    }

    #[test]
    fn corner_distance2_on_4x4() {
        let m = BoxId::new(2, 0, 0).distance2_neighbors();
        let mut got: Vec<(u32, u32)> = m.iter().map(|b| (b.x, b.y)).collect();
        got.sort_unstable();
        let mut want = vec![(2, 0), (2, 1), (2, 2), (1, 2), (0, 2)];
        want.sort_unstable();
        assert_eq!(got, want);
    }

    #[test]
    fn distance_2_matches_definition() {
        // M(B) = N(N(B)) \ (N(B) ∪ B), enumerated literally.
        for level in 1..=4 {
            let side = 1usize << level;
            for idx in 0..side * side {
                let b = BoxId::from_index(level, idx);
                let n = b.neighbors();
                let mut nn: Vec<BoxId> = n.iter().flat_map(|c| c.neighbors()).collect();
                nn.sort();
                nn.dedup();
                nn.retain(|c| *c != b && !n.contains(c));
                let mut m = b.distance2_neighbors();
                m.sort();
                assert_eq!(nn, m, "box {b}");
            }
        }
    }

    #[test]
    fn box_distance_examples() {
        let a = BoxId::new(3, 0, 0);
        assert_eq!(box_distance(&a, &a).unwrap(), 0);
        assert_eq!(box_distance(&a, &BoxId::new(3, 1, 1)).unwrap(), 1);
        assert_eq!(box_distance(&a, &BoxId::new(3, 1, 0)).unwrap(), 1);
        assert_eq!(box_distance(&a, &BoxId::new(3, 3, 0)).unwrap(), 3);
        assert!(matches!(
            box_distance(&a, &BoxId::new(2, 0, 0)),
            Err(Error::LevelMismatch(..))
        ));
    }

    #[test]
    fn metric_agrees_with_relations() {
        for level in 1..=4u32 {
            let side = 1usize << level;
            for i in 0..side * side {
                let b1 = BoxId::from_index(level, i);
                let n = b1.neighbors();
                let m = b1.distance2_neighbors();
                for j in 0..side * side {
                    let b2 = BoxId::from_index(level, j);
                    let d = b1.chebyshev(&b2);
                    assert_eq!(d == 1, n.contains(&b2));
                    assert_eq!(d == 2, m.contains(&b2));
                    // Symmetry of both relations.
                    assert_eq!(n.contains(&b2), b2.neighbors().contains(&b1));
                    assert_eq!(m.contains(&b2), b2.distance2_neighbors().contains(&b1));
                }
            }
        }
    }

    #[test]
    fn structural_merge_property() {
        for level in 1..=5u32 {
            let side = 1usize << level;
            for i in 0..side * side {
                let b = BoxId::from_index(level, i);
                let pb = b.parent().unwrap();
                let mut near = b.neighbors();
                near.extend(b.distance2_neighbors());
                near.push(b);
                for c in near {
                    let pc = c.parent().unwrap();
                    assert!(pc == pb || pb.neighbors().contains(&pc), "{b} / {c}");
                }
            }
        }
    }

    #[test]
    fn merge_sizes_add_up() {
        let t = QuadTree::build(make_grid(8).unwrap(), 4).unwrap();
        assert_eq!(t.levels(), 2);
        let mut sk = BTreeMap::new();
        let sizes = [10usize, 12, 9, 11];
        let mut next = 0;
        for (c, &s) in BoxId::new(1, 0, 0).children().iter().zip(&sizes) {
            sk.insert(*c, (next..next + s).collect::<Vec<_>>());
            next += s;
        }
        for i in 0..16 {
            sk.entry(BoxId::from_index(2, i)).or_insert_with(Vec::new);
        }
        let merged = t.merge_to_parent(2, &sk).unwrap();
        assert_eq!(merged[0].len(), 42);
        assert!(merged[1..].iter().all(|m| m.is_empty()));
    }

    #[test]
    fn merge_rejects_missing_child() {
        let t = QuadTree::build(make_grid(8).unwrap(), 4).unwrap();
        let sk = BTreeMap::from([(BoxId::new(2, 0, 0), vec![1usize])]);
        assert!(matches!(t.merge_to_parent(2, &sk), Err(Error::MissingSkeleton(_))));
    }

    proptest! {
        #[test]
        fn merge_preserves_index_union(seed in 0u64..1000) {
            let t = QuadTree::build(make_grid(16).unwrap(), 4).unwrap();
            let level = t.levels();
            let mut sk = BTreeMap::new();
            let mut s = seed;
            for b in t.leaves() {
                let kept: Vec<usize> = b.owned_indices.iter().copied().filter(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                    (s >> 33) % 2 == 0
                }).collect();
                sk.insert(b.id, kept);
            }
            let merged = t.merge_to_parent(level, &sk).unwrap();
            let mut lhs: Vec<usize> = merged.into_iter().flatten().collect();
            let mut rhs: Vec<usize> = sk.values().flatten().copied().collect();
            let n = lhs.len();
            lhs.sort_unstable();
            rhs.sort_unstable();
            prop_assert_eq!(&lhs, &rhs);
            lhs.dedup();
            prop_assert_eq!(lhs.len(), n);
        }
    }
}
