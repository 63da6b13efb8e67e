use std::cmp::Ordering;
use std::fmt;

use smallvec::SmallVec;

/// The set `{lo, lo + stride, ..., hi}`.
///
/// Single points are always stored with stride 1 so that equal sets compare
/// equal.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct StridedInterval {
    lo: i64,
    hi: i64,
    stride: i64,
}

pub(crate) type Pieces = SmallVec<[StridedInterval; 4]>;

impl StridedInterval {
    /// Panics when the invariants (`lo <= hi`, positive stride, stride divides
    /// the span) do not hold.
    pub fn new(lo: i64, hi: i64, stride: i64) -> Self {
        Self::try_new(lo, hi, stride).unwrap_or_else(|| {
            panic!("invalid strided interval {lo}..{hi}:{stride}");
        })
    }

    pub fn try_new(lo: i64, hi: i64, stride: i64) -> Option<Self> {
        if lo > hi || stride <= 0 || (hi - lo) % stride != 0 {
            return None;
        }
        let stride = if lo == hi { 1 } else { stride };
        Some(StridedInterval { lo, hi, stride })
    }

    pub fn point(x: i64) -> Self {
        StridedInterval { lo: x, hi: x, stride: 1 }
    }

    /// Contiguous `[lo, hi]`.
    pub fn range(lo: i64, hi: i64) -> Self {
        Self::new(lo, hi, 1)
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.hi
    }

    pub fn stride(&self) -> i64 {
        self.stride
    }

    pub fn len(&self) -> u64 {
        ((self.hi - self.lo) / self.stride + 1) as u64
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, x: i64) -> bool {
        x >= self.lo && x <= self.hi && (x - self.lo) % self.stride == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.len() as i64).map(move |k| self.lo + k * self.stride)
    }

    pub fn translate(&self, delta: i64) -> Self {
        StridedInterval { lo: self.lo + delta, hi: self.hi + delta, stride: self.stride }
    }

    /// `{coeff * x + offset}`; `coeff` must be nonzero.
    pub fn scale(&self, coeff: i64, offset: i64) -> Self {
        assert!(coeff != 0, "zero coefficient");
        let (a, b) = (coeff * self.lo + offset, coeff * self.hi + offset);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        Self::new(lo, hi, self.stride * coeff.abs())
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.intersect(other).is_some_and(|i| i == *self)
    }

    pub fn intersect(&self, other: &Self) -> Option<Self> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        if lo > hi {
            return None;
        }
        // x = self.lo (mod self.stride), x = other.lo (mod other.stride)
        let (first, step) = crt(self.lo, self.stride, other.lo, other.stride)?;
        let first = first + ceil_div(lo - first, step) * step;
        if first > hi {
            return None;
        }
        let last = first + (hi - first) / step * step;
        Some(Self::new(first, last, step))
    }

    /// Exact `self \ other` as disjoint pieces in ascending order of `lo`.
    pub fn difference(&self, other: &Self) -> Pieces {
        let mut out = Pieces::new();
        let Some(inner) = self.intersect(other) else {
            out.push(*self);
            return out;
        };
        let s = self.stride;
        if inner.lo > self.lo {
            out.push(Self::new(self.lo, inner.lo - s, s));
        }
        if !inner.is_point() {
            // inner has stride m * s and is aligned with self
            let m = inner.stride / s;
            let q = (inner.hi - inner.lo) / inner.stride;
            for r in 1..m {
                let start = inner.lo + r * s;
                let end = start + (q - 1) * inner.stride;
                out.push(Self::new(start, end, inner.stride));
            }
        }
        if inner.hi < self.hi {
            out.push(Self::new(inner.hi + s, self.hi, s));
        }
        out.sort_by(|a, b| a.lo.cmp(&b.lo).then(a.stride.cmp(&b.stride)));
        out
    }

    /// Union of two adjacent intervals as a single progression, if exact.
    pub(crate) fn merge_adjacent(&self, next: &Self) -> Option<Self> {
        if self.hi >= next.lo {
            return None;
        }
        let step = match (self.is_point(), next.is_point()) {
            (false, false) if self.stride == next.stride => self.stride,
            (false, false) => return None,
            (true, false) => next.stride,
            (false, true) => self.stride,
            (true, true) => 1,
        };
        (self.hi + step == next.lo).then(|| Self::new(self.lo, next.hi, step))
    }

    /// `{a + b : a in self, b in other}` (both non-empty) as disjoint pieces.
    pub fn minkowski_sum(&self, other: &Self) -> Pieces {
        let mut out = Pieces::new();
        if self.is_point() || other.is_point() {
            let (p, q) = if self.is_point() { (self, other) } else { (other, self) };
            out.push(q.translate(p.lo));
            return out;
        }
        let base = self.lo + other.lo;
        let (n1, n2) = (self.len() as i64, other.len() as i64);
        let g = gcd(self.stride, other.stride);
        let (a, b) = (self.stride / g, other.stride / g);
        // Normalize so the unit-step side (if any) is `a`.
        let (a, n1, b, n2) = if a == 1 || b != 1 { (a, n1, b, n2) } else { (b, n2, a, n1) };
        if a == 1 {
            if n1 >= b {
                out.push(Self::new(base, base + g * ((n1 - 1) + b * (n2 - 1)), g));
            } else if n2 <= n1 {
                for v in 0..n2 {
                    let lo = base + g * b * v;
                    out.push(Self::new(lo, lo + g * (n1 - 1), g));
                }
            } else {
                for u in 0..n1 {
                    let lo = base + g * u;
                    out.push(Self::new(lo, lo + g * b * (n2 - 1), g * b));
                }
                out.sort_by_key(|p| p.lo);
            }
            return out;
        }
        // General coprime steps: enumerate and split into maximal runs.
        let mut vals: Vec<i64> = Vec::with_capacity((n1 * n2) as usize);
        for u in 0..n1 {
            for v in 0..n2 {
                vals.push(a * u + b * v);
            }
        }
        vals.sort_unstable();
        vals.dedup();
        let mut start = vals[0];
        let mut prev = vals[0];
        for &x in &vals[1..] {
            if x != prev + 1 {
                out.push(Self::new(base + g * start, base + g * prev, g));
                start = x;
            }
            prev = x;
        }
        out.push(Self::new(base + g * start, base + g * prev, g));
        out
    }
}

impl PartialOrd for StridedInterval {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for StridedInterval {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.lo, self.hi, self.stride).cmp(&(other.lo, other.hi, other.stride))
    }
}

impl fmt::Display for StridedInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}:{}", self.lo, self.hi, self.stride)
    }
}

pub(crate) fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn ceil_div(a: i64, b: i64) -> i64 {
    -((-a).div_euclid(b))
}

/// Smallest-residue solution of the two congruences, with the combined modulus.
fn crt(r1: i64, m1: i64, r2: i64, m2: i64) -> Option<(i64, i64)> {
    let g = gcd(m1, m2);
    if (r2 - r1).rem_euclid(g) != 0 {
        return None;
    }
    let m2g = m2 / g;
    let lcm = m1 / g * m2;
    if m2g == 1 {
        return Some((r1.rem_euclid(lcm), lcm));
    }
    let inv = mod_inverse((m1 / g).rem_euclid(m2g), m2g);
    let k = (((r2 - r1) / g).rem_euclid(m2g) as i128 * inv as i128).rem_euclid(m2g as i128) as i64;
    let x = (r1 as i128 + m1 as i128 * k as i128).rem_euclid(lcm as i128) as i64;
    Some((x, lcm))
}

fn mod_inverse(a: i64, m: i64) -> i64 {
    let (mut old_r, mut r) = (a, m);
    let (mut old_s, mut s) = (1i64, 0i64);
    while r != 0 {
        let q = old_r / r;
        (old_r, r) = (r, old_r - q * r);
        (old_s, s) = (s, old_s - q * s);
    }
    old_s.rem_euclid(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn set(si: &StridedInterval) -> BTreeSet<i64> {
        si.iter().collect()
    }

    fn pieces_set(ps: &[StridedInterval]) -> BTreeSet<i64> {
        let mut out = BTreeSet::new();
        for p in ps {
            for x in p.iter() {
                assert!(out.insert(x), "pieces overlap at {x}");
            }
        }
        out
    }

    fn all_intervals(max: i64) -> Vec<StridedInterval> {
        let mut v = Vec::new();
        for lo in 0..=max {
            for hi in lo..=max {
                for s in 1..=3 {
                    if let Some(si) = StridedInterval::try_new(lo, hi, s) {
                        v.push(si);
                    }
                }
            }
        }
        v.sort();
        v.dedup();
        v
    }

    #[test]
    fn single_point_normalizes_stride() {
        assert_eq!(StridedInterval::new(3, 3, 5), StridedInterval::point(3));
        assert!(StridedInterval::try_new(0, 5, 2).is_none());
        assert!(StridedInterval::try_new(2, 1, 1).is_none());
    }

    #[test]
    fn scale_keeps_gaps() {
        let p = StridedInterval::range(0, 3).scale(2, 0);
        assert_eq!(set(&p), BTreeSet::from([0, 2, 4, 6]));
        let n = StridedInterval::range(0, 3).scale(-1, 5);
        assert_eq!(set(&n), BTreeSet::from([2, 3, 4, 5]));
    }

    #[test]
    fn intersect_and_difference_match_enumeration() {
        let all = all_intervals(7);
        for a in &all {
            for b in &all {
                let sa = set(a);
                let sb = set(b);
                let want: BTreeSet<i64> = sa.intersection(&sb).copied().collect();
                let got = a.intersect(b).map(|i| set(&i)).unwrap_or_default();
                assert_eq!(got, want, "{a} & {b}");
                let want: BTreeSet<i64> = sa.difference(&sb).copied().collect();
                assert_eq!(pieces_set(&a.difference(b)), want, "{a} - {b}");
            }
        }
    }

    #[test]
    fn minkowski_matches_enumeration() {
        let all = all_intervals(6);
        for a in &all {
            for b in &all {
                for (ca, cb) in [(1, 1), (2, 1), (1, 3), (2, 3), (-1, 1)] {
                    let x = a.scale(ca, 0);
                    let y = b.scale(cb, 1);
                    let want: BTreeSet<i64> =
                        x.iter().flat_map(|u| y.iter().map(move |v| u + v)).collect();
                    assert_eq!(pieces_set(&x.minkowski_sum(&y)), want, "{x} + {y}");
                }
            }
        }
    }

    #[test]
    fn merge_adjacent_rules() {
        let a = StridedInterval::range(0, 2);
        let b = StridedInterval::range(3, 4);
        assert_eq!(a.merge_adjacent(&b), Some(StridedInterval::range(0, 4)));
        let c = StridedInterval::new(0, 4, 2);
        let d = StridedInterval::new(6, 8, 2);
        assert_eq!(c.merge_adjacent(&d), Some(StridedInterval::new(0, 8, 2)));
        assert_eq!(c.merge_adjacent(&b), None);
        assert_eq!(StridedInterval::point(1).merge_adjacent(&StridedInterval::point(3)), None);
    }
}
