//! Exact integer-set algebra over named rank spaces.

mod interval;
mod region;
mod relation;

pub use interval::StridedInterval;
pub use region::{IntBox, Region, Space};
pub use relation::{preimage_of_projection, AffineRelation, ResolvedExpr};

use thiserror::Error;

use crate::workload::{FusionSet, LayerId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GeometryError {
    #[error("rank mismatch: {left} vs {right}")]
    RankMismatch { left: String, right: String },
    #[error("region has {count} points, over the limit of {limit}")]
    LimitExceeded { count: u64, limit: u64 },
    #[error("interval {lo}..{hi} on {dim} leaves the extent {extent}")]
    OutOfExtent { dim: String, lo: i64, hi: i64, extent: i64 },
    #[error("index {index} is not a rank of {space}")]
    UnknownIndex { index: String, space: String },
    #[error("expression {0} has more than two terms")]
    TooManyTerms(String),
}

/// Operations of `layer` that produce the output points in `needed`.
pub fn producer_ops(fs: &FusionSet, layer: LayerId, needed: &Region) -> Result<Region, GeometryError> {
    let l = fs.layer(layer);
    let out = fs.tensor(l.output);
    preimage_of_projection(needed, &l.space, &l.shape, &l.output_dims, &out.shape)
}
