use smallvec::SmallVec;

use super::interval::{Pieces, StridedInterval};
use super::region::{IntBox, Region, Space};
use super::GeometryError;
use crate::workload::AffineExpr;

/// An affine expression whose indices are resolved to domain positions.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct ResolvedExpr {
    pub terms: SmallVec<[(i64, usize); 2]>,
    pub constant: i64,
}

impl ResolvedExpr {
    pub fn eval(&self, point: &[i64]) -> i64 {
        self.terms.iter().map(|&(c, d)| c * point[d]).sum::<i64>() + self.constant
    }

    fn image(&self, b: &IntBox) -> Pieces {
        let mut out = Pieces::new();
        match self.terms.as_slice() {
            [] => out.push(StridedInterval::point(self.constant)),
            [(c, d)] => out.push(b.dims()[*d].scale(*c, self.constant)),
            [(c1, d1), (c2, d2)] => {
                let x = b.dims()[*d1].scale(*c1, self.constant);
                let y = b.dims()[*d2].scale(*c2, 0);
                out = x.minkowski_sum(&y);
            }
            _ => unreachable!("expressions are limited to two terms"),
        }
        out
    }
}

/// Maps each point of `domain` to one point of `codomain`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct AffineRelation {
    domain: Space,
    codomain: Space,
    exprs: Vec<ResolvedExpr>,
    /// Domain dims referenced by more than one codomain expression.
    shared: Vec<usize>,
}

impl AffineRelation {
    pub fn new(domain: Space, codomain: Space, exprs: &[AffineExpr]) -> Result<Self, GeometryError> {
        if exprs.len() != codomain.dim() {
            return Err(GeometryError::RankMismatch {
                left: format!("{} expressions", exprs.len()),
                right: codomain.to_string(),
            });
        }
        let mut resolved = Vec::with_capacity(exprs.len());
        for e in exprs {
            if e.terms.len() > 2 {
                return Err(GeometryError::TooManyTerms(e.to_string()));
            }
            let mut terms = SmallVec::new();
            for (c, r) in &e.terms {
                let d = domain.position(r).ok_or_else(|| GeometryError::UnknownIndex {
                    index: r.to_string(),
                    space: domain.to_string(),
                })?;
                terms.push((*c, d));
            }
            resolved.push(ResolvedExpr { terms, constant: e.constant });
        }
        Ok(Self::from_resolved(domain, codomain, resolved))
    }

    pub fn from_resolved(domain: Space, codomain: Space, exprs: Vec<ResolvedExpr>) -> Self {
        let mut uses = vec![0usize; domain.dim()];
        for e in &exprs {
            for &(_, d) in &e.terms {
                uses[d] += 1;
            }
        }
        let shared = (0..domain.dim()).filter(|&d| uses[d] > 1).collect();
        AffineRelation { domain, codomain, exprs, shared }
    }

    pub fn domain(&self) -> &Space {
        &self.domain
    }

    pub fn codomain(&self) -> &Space {
        &self.codomain
    }

    pub fn exprs(&self) -> &[ResolvedExpr] {
        &self.exprs
    }

    pub fn apply(&self, point: &[i64]) -> Vec<i64> {
        self.exprs.iter().map(|e| e.eval(point)).collect()
    }

    /// The exact set `{rel(x) : x in r}`.
    pub fn image(&self, r: &Region) -> Result<Region, GeometryError> {
        if r.space() != &self.domain {
            return Err(GeometryError::RankMismatch {
                left: r.space().to_string(),
                right: self.domain.to_string(),
            });
        }
        let mut boxes = Vec::new();
        for b in r.boxes() {
            if self.shared.is_empty() {
                self.image_box(b, &mut boxes);
            } else {
                for slice in slices(b, &self.shared) {
                    self.image_box(&slice, &mut boxes);
                }
            }
        }
        Ok(Region::from_boxes(self.codomain.clone(), boxes))
    }

    /// Per-dimension images multiply out into disjoint boxes.
    fn image_box(&self, b: &IntBox, out: &mut Vec<IntBox>) {
        let per_dim: Vec<Pieces> = self.exprs.iter().map(|e| e.image(b)).collect();
        let mut acc: Vec<SmallVec<[StridedInterval; 6]>> = vec![SmallVec::new()];
        for pieces in &per_dim {
            let mut next = Vec::with_capacity(acc.len() * pieces.len());
            for prefix in &acc {
                for p in pieces {
                    let mut v = prefix.clone();
                    v.push(*p);
                    next.push(v);
                }
            }
            acc = next;
        }
        out.extend(acc.into_iter().map(IntBox));
    }
}

/// Splits `b` so the listed dims are single points in every slice.
fn slices(b: &IntBox, dims: &[usize]) -> Vec<IntBox> {
    let mut out = vec![b.clone()];
    for &d in dims {
        out = out
            .into_iter()
            .flat_map(|s| {
                b.dims()[d].iter().map(move |x| {
                    let mut t = s.clone();
                    t.0[d] = StridedInterval::point(x);
                    t
                })
            })
            .collect();
    }
    out
}

/// Operation points of a producer whose output lands in `needed`.
///
/// `output_dims[k]` is the operation-space dimension indexing output dim `k`;
/// every other operation dimension is a reduction and spans its full shape.
pub fn preimage_of_projection(
    needed: &Region,
    op_space: &Space,
    op_shape: &[i64],
    output_dims: &[usize],
    output_shape: &[i64],
) -> Result<Region, GeometryError> {
    if needed.space().dim() != output_dims.len() {
        return Err(GeometryError::RankMismatch {
            left: needed.space().to_string(),
            right: format!("{} output dims", output_dims.len()),
        });
    }
    let mut boxes = Vec::with_capacity(needed.boxes().len());
    for b in needed.boxes() {
        let mut dims: SmallVec<[StridedInterval; 6]> =
            op_shape.iter().map(|&s| StridedInterval::range(0, s - 1)).collect();
        for (k, si) in b.dims().iter().enumerate() {
            if si.lo() < 0 || si.hi() >= output_shape[k] {
                return Err(GeometryError::OutOfExtent {
                    dim: needed.space().ranks()[k].to_string(),
                    lo: si.lo(),
                    hi: si.hi(),
                    extent: output_shape[k],
                });
            }
            dims[output_dims[k]] = *si;
        }
        boxes.push(IntBox(dims));
    }
    // Distinct output points map to disjoint operation boxes.
    let mut r = Region::empty(op_space.clone());
    r = r.union(&Region::from_boxes(op_space.clone(), boxes))?;
    Ok(r)
}
