use std::fmt;
use std::sync::Arc;

use smallvec::SmallVec;

use super::interval::StridedInterval;
use super::GeometryError;
use crate::workload::RankId;

/// An ordered tuple of ranks shared by every region over the same space.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Space(Arc<[RankId]>);

impl Space {
    pub fn new(ranks: impl IntoIterator<Item = RankId>) -> Self {
        Space(ranks.into_iter().collect())
    }

    pub fn ranks(&self) -> &[RankId] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn position(&self, rank: &RankId) -> Option<usize> {
        self.0.iter().position(|r| r == rank)
    }

    fn same(&self, other: &Space) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0 == other.0
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, r) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{r}")?;
        }
        write!(f, ")")
    }
}

/// A product of strided intervals, one per dimension of its space.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct IntBox(pub SmallVec<[StridedInterval; 6]>);

impl IntBox {
    pub fn new(dims: impl IntoIterator<Item = StridedInterval>) -> Self {
        IntBox(dims.into_iter().collect())
    }

    pub fn dims(&self) -> &[StridedInterval] {
        &self.0
    }

    pub fn count(&self) -> u64 {
        self.0.iter().map(StridedInterval::len).product()
    }

    pub fn contains(&self, point: &[i64]) -> bool {
        self.0.iter().zip(point).all(|(si, &x)| si.contains(x))
    }

    pub fn intersect(&self, other: &IntBox) -> Option<IntBox> {
        let mut dims = SmallVec::with_capacity(self.0.len());
        for (a, b) in self.0.iter().zip(&other.0) {
            dims.push(a.intersect(b)?);
        }
        Some(IntBox(dims))
    }

    pub fn is_subset(&self, other: &IntBox) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a.is_subset(b))
    }

    /// Exact `self \ other` as pairwise-disjoint boxes.
    pub fn difference(&self, other: &IntBox) -> Vec<IntBox> {
        let Some(inner) = self.intersect(other) else {
            return vec![self.clone()];
        };
        let mut out = Vec::new();
        // Peel one rank at a time: ranks before `k` are clipped to the
        // intersection, rank `k` takes what lies outside it.
        let mut prefix = self.clone();
        for k in 0..self.0.len() {
            for piece in self.0[k].difference(&inner.0[k]) {
                let mut b = prefix.clone();
                b.0[k] = piece;
                out.push(b);
            }
            prefix.0[k] = inner.0[k];
        }
        out
    }

    pub fn translate(&self, delta: &[i64]) -> IntBox {
        IntBox(self.0.iter().zip(delta).map(|(si, &d)| si.translate(d)).collect())
    }

    fn for_each_point(&self, mut f: impl FnMut(&[i64])) {
        let n = self.0.len();
        if n == 0 {
            f(&[]);
            return;
        }
        let mut cur: Vec<i64> = self.0.iter().map(|s| s.lo()).collect();
        loop {
            f(&cur);
            let mut k = n;
            loop {
                if k == 0 {
                    return;
                }
                k -= 1;
                let si = &self.0[k];
                if cur[k] < si.hi() {
                    cur[k] += si.stride();
                    break;
                }
                cur[k] = si.lo();
            }
        }
    }
}

impl fmt::Display for IntBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, si) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{si}")?;
        }
        Ok(())
    }
}

/// A finite set of integer points: a union of pairwise-disjoint boxes.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Region {
    space: Space,
    boxes: Vec<IntBox>,
}

impl Region {
    pub fn empty(space: Space) -> Self {
        Region { space, boxes: Vec::new() }
    }

    pub fn from_box(space: Space, b: IntBox) -> Self {
        assert_eq!(b.0.len(), space.dim(), "box arity does not match space {space}");
        Region { space, boxes: vec![b] }
    }

    /// Builds a region from possibly overlapping boxes.
    pub fn from_boxes(space: Space, boxes: impl IntoIterator<Item = IntBox>) -> Self {
        let mut r = Region::empty(space);
        for b in boxes {
            r.add_box(b);
        }
        r.canonicalize();
        r
    }

    /// The box `[0, shape_k - 1]` along each dimension.
    pub fn full(space: Space, shape: &[i64]) -> Self {
        assert_eq!(shape.len(), space.dim());
        if shape.iter().any(|&s| s <= 0) {
            return Region::empty(space);
        }
        let b = IntBox::new(shape.iter().map(|&s| StridedInterval::range(0, s - 1)));
        Region::from_box(space, b)
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn boxes(&self) -> &[IntBox] {
        &self.boxes
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn count(&self) -> u64 {
        self.boxes.iter().map(IntBox::count).sum()
    }

    pub fn contains(&self, point: &[i64]) -> bool {
        self.boxes.iter().any(|b| b.contains(point))
    }

    fn check(&self, other: &Region) -> Result<(), GeometryError> {
        if self.space.same(&other.space) {
            Ok(())
        } else {
            Err(GeometryError::RankMismatch {
                left: self.space.to_string(),
                right: other.space.to_string(),
            })
        }
    }

    pub fn union(&self, other: &Region) -> Result<Region, GeometryError> {
        self.check(other)?;
        if other.is_empty() {
            return Ok(self.clone());
        }
        if self.is_empty() {
            return Ok(other.clone());
        }
        let mut out = self.clone();
        for b in &other.boxes {
            out.add_box(b.clone());
        }
        out.canonicalize();
        Ok(out)
    }

    pub fn intersect(&self, other: &Region) -> Result<Region, GeometryError> {
        self.check(other)?;
        let mut boxes = Vec::new();
        for a in &self.boxes {
            for b in &other.boxes {
                if let Some(i) = a.intersect(b) {
                    boxes.push(i);
                }
            }
        }
        let mut out = Region { space: self.space.clone(), boxes };
        out.canonicalize();
        Ok(out)
    }

    pub fn intersect_box(&self, b: &IntBox) -> Region {
        let boxes = self.boxes.iter().filter_map(|a| a.intersect(b)).collect();
        let mut out = Region { space: self.space.clone(), boxes };
        out.canonicalize();
        out
    }

    pub fn difference(&self, other: &Region) -> Result<Region, GeometryError> {
        self.check(other)?;
        if other.is_empty() || self.is_empty() {
            return Ok(self.clone());
        }
        let mut cur = self.boxes.clone();
        for b in &other.boxes {
            cur = cur.iter().flat_map(|a| a.difference(b)).collect();
            if cur.is_empty() {
                break;
            }
        }
        let mut out = Region { space: self.space.clone(), boxes: cur };
        out.canonicalize();
        Ok(out)
    }

    pub fn is_subset(&self, other: &Region) -> Result<bool, GeometryError> {
        Ok(self.difference(other)?.is_empty())
    }

    /// Per-dimension `[min, max]` hull, or `None` when empty.
    pub fn bounds(&self) -> Option<Vec<(i64, i64)>> {
        let first = self.boxes.first()?;
        let mut out: Vec<(i64, i64)> = first.0.iter().map(|s| (s.lo(), s.hi())).collect();
        for b in &self.boxes[1..] {
            for (o, s) in out.iter_mut().zip(&b.0) {
                o.0 = o.0.min(s.lo());
                o.1 = o.1.max(s.hi());
            }
        }
        Some(out)
    }

    pub fn translate(&self, delta: &[i64]) -> Region {
        let mut out = Region {
            space: self.space.clone(),
            boxes: self.boxes.iter().map(|b| b.translate(delta)).collect(),
        };
        out.boxes.sort();
        out
    }

    /// Shifted so the hull's lower corner is the origin.
    pub fn normalized(&self) -> Region {
        match self.bounds() {
            Some(bounds) => {
                let delta: Vec<i64> = bounds.iter().map(|&(lo, _)| -lo).collect();
                self.translate(&delta)
            }
            None => self.clone(),
        }
    }

    /// Every point in lexicographic order.
    pub fn enumerate_points(&self, limit: u64) -> Result<Vec<Vec<i64>>, GeometryError> {
        let n = self.count();
        if n > limit {
            return Err(GeometryError::LimitExceeded { count: n, limit });
        }
        let mut pts = Vec::with_capacity(n as usize);
        for b in &self.boxes {
            b.for_each_point(|p| pts.push(p.to_vec()));
        }
        pts.sort_unstable();
        Ok(pts)
    }

    /// Adds a box that may overlap existing ones, keeping disjointness.
    fn add_box(&mut self, b: IntBox) {
        let mut pieces = vec![b];
        for existing in &self.boxes {
            pieces = pieces.iter().flat_map(|p| p.difference(existing)).collect();
            if pieces.is_empty() {
                return;
            }
        }
        self.boxes.extend(pieces);
    }

    /// Merges adjacent boxes until no merge applies, then sorts. Assumes the
    /// boxes are already pairwise disjoint.
    pub fn canonicalize(&mut self) {
        let n = self.space.dim();
        if n == 0 {
            self.boxes.truncate(1);
            return;
        }
        loop {
            let mut merged_any = false;
            for k in (0..n).rev() {
                merged_any |= merge_along(&mut self.boxes, k);
            }
            if !merged_any {
                break;
            }
        }
        self.boxes.sort();
    }
}

fn merge_along(boxes: &mut Vec<IntBox>, k: usize) -> bool {
    if boxes.len() < 2 {
        return false;
    }
    boxes.sort_by(|a, b| {
        let ka = a.0.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, s)| s);
        let kb = b.0.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, s)| s);
        ka.cmp(kb).then(a.0[k].cmp(&b.0[k]))
    });
    let mut out: Vec<IntBox> = Vec::with_capacity(boxes.len());
    let mut merged = false;
    for b in boxes.drain(..) {
        if let Some(last) = out.last_mut() {
            let same_rest = last.0.iter().zip(&b.0).enumerate().all(|(i, (x, y))| i == k || x == y);
            if same_rest {
                if let Some(m) = last.0[k].merge_adjacent(&b.0[k]) {
                    last.0[k] = m;
                    merged = true;
                    continue;
                }
            }
        }
        out.push(b);
    }
    *boxes = out;
    merged
}

impl fmt::Display for Region {
    /// One box per line, `rank=lo..hi:stride` per dimension.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (bi, b) in self.boxes.iter().enumerate() {
            if bi > 0 {
                writeln!(f)?;
            }
            for (i, (rank, si)) in self.space.ranks().iter().zip(&b.0).enumerate() {
                if i > 0 {
                    write!(f, " ")?;
                }
                write!(f, "{rank}={si}")?;
            }
        }
        Ok(())
    }
}
