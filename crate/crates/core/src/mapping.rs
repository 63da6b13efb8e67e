//! Mappings: inter-layer partitions and schedule, parallelism, per-tensor
//! retention, and per-layer intra-layer loop nests.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::Architecture;
use crate::workload::{FusionSet, RankId, TensorRole};

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Partition {
    pub rank: RankId,
    pub tile_size: i64,
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.rank, self.tile_size)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PartitionRepr {
    Short(String),
    Full { rank: RankId, tile_size: i64 },
}

impl Serialize for Partition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PartitionRepr::Full { rank: self.rank.clone(), tile_size: self.tile_size }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Partition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        match PartitionRepr::deserialize(d)? {
            PartitionRepr::Full { rank, tile_size } => Ok(Partition { rank, tile_size }),
            PartitionRepr::Short(s) => {
                let (r, t) = s
                    .split_once(':')
                    .ok_or_else(|| D::Error::custom(format!("partition {s:?} is not RANK:TILE")))?;
                let tile_size = t
                    .trim()
                    .parse()
                    .map_err(|_| D::Error::custom(format!("bad tile size in partition {s:?}")))?;
                Ok(Partition { rank: RankId::new(r.trim()), tile_size })
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parallelism {
    #[default]
    Sequential,
    Pipeline,
}

impl fmt::Display for Parallelism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Parallelism::Sequential => "sequential",
            Parallelism::Pipeline => "pipeline",
        })
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug, Default, Serialize, Deserialize)]
pub struct InterLayerMapping {
    #[serde(default)]
    pub partitions: Vec<Partition>,
    #[serde(default)]
    pub parallelism: Parallelism,
}

/// Number of leading partitions whose tile is retained; `None` keeps only the
/// current iteration's data.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Depth {
    Tiles(usize),
    None,
}

impl Depth {
    pub fn resolve(self, n_partitions: usize) -> usize {
        match self {
            Depth::Tiles(d) => d,
            Depth::None => n_partitions,
        }
    }
}

impl fmt::Display for Depth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Depth::Tiles(d) => write!(f, "{d}"),
            Depth::None => f.write_str("none"),
        }
    }
}

impl Serialize for Depth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Depth::Tiles(d) => s.serialize_u64(*d as u64),
            Depth::None => s.serialize_str("none"),
        }
    }
}

impl<'de> Deserialize<'de> for Depth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            N(usize),
            S(String),
        }
        match Repr::deserialize(d)? {
            Repr::N(n) => Ok(Depth::Tiles(n)),
            Repr::S(s) if s == "none" => Ok(Depth::None),
            Repr::S(s) => Err(serde::de::Error::custom(format!("depth must be an integer or \"none\", got {s:?}"))),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetentionChoice {
    pub tensor: String,
    pub depth: Depth,
    pub level: String,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoopKind {
    Temporal,
    Spatial,
}

#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntraLayerLoop {
    pub rank: RankId,
    pub tile_size: i64,
    pub kind: LoopKind,
    pub level: String,
}

#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct Mapping {
    #[serde(flatten)]
    pub inter: InterLayerMapping,
    #[serde(default)]
    pub retention: Vec<RetentionChoice>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub intra: BTreeMap<String, Vec<IntraLayerLoop>>,
}

pub fn parse_mapping(text: &str) -> Result<Mapping, MappingError> {
    let m: Mapping = serde_json::from_str(text).map_err(|e| match e.classify() {
        serde_json::error::Category::Syntax | serde_json::error::Category::Eof => {
            MappingError::Syntax { line: e.line(), column: e.column(), message: e.to_string() }
        }
        _ => MappingError::Schema(e.to_string()),
    })?;
    Ok(m)
}

impl Mapping {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("mapping serializes")
    }

    /// Partitions in schedule order, e.g. `P2:3,Q2:2`; `-` when untiled.
    pub fn partitions_label(&self) -> String {
        if self.inter.partitions.is_empty() {
            return "-".into();
        }
        self.inter.partitions.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
    }

    /// Partition ranks in schedule order, e.g. `P2>Q2`.
    pub fn schedule_label(&self) -> String {
        if self.inter.partitions.is_empty() {
            return "untiled".into();
        }
        self.inter.partitions.iter().map(|p| p.rank.as_str()).collect::<Vec<_>>().join(">")
    }

    /// `tensor@level:depth` per tensor, sorted by tensor name.
    pub fn retention_label(&self) -> String {
        let mut v: Vec<String> =
            self.retention.iter().map(|r| format!("{}@{}:{}", r.tensor, r.level, r.depth)).collect();
        v.sort();
        v.join(";")
    }
}

/// A broken mapping rule, reported as data.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Violation {
    pub field: String,
    pub rule: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} [{}]", self.field, self.message, self.rule)
    }
}

/// One loop of a resolved intra-layer nest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct BoundLoop {
    pub dim: usize,
    pub tile: i64,
    pub kind: LoopKind,
    pub level: usize,
    /// Trip count against the nominal enclosing extent; spatial loops use it
    /// to number children.
    pub radix: i64,
}

/// A mapping resolved against a workload and architecture.
#[derive(Clone, Debug)]
pub struct BoundMapping {
    /// `(dim of the last layer, tile size)`, outermost first.
    pub partitions: Vec<(usize, i64)>,
    pub parallelism: Parallelism,
    /// Per tensor id.
    pub retention_level: Vec<usize>,
    pub retention_depth: Vec<usize>,
    /// Per tensor, per partition loop: whether the tensor's tiles vary along
    /// that loop. A loop the tensor ignores never evicts it.
    pub relevant: Vec<Vec<bool>>,
    /// Per layer; user loops followed by unit-tile temporal loops at the
    /// innermost level for ranks not already tiled down to 1.
    pub nests: Vec<Vec<BoundLoop>>,
    /// Innermost buffer level.
    pub innermost: usize,
}

impl BoundMapping {
    pub fn n_partitions(&self) -> usize {
        self.partitions.len()
    }

    /// Whether two iteration coordinates keep tensor `t`'s retained data.
    pub fn same_group(&self, t: usize, a: &[i64], b: &[i64]) -> bool {
        (0..self.retention_depth[t]).all(|j| !self.relevant[t][j] || a[j] == b[j])
    }
}

pub fn validate_mapping(m: &Mapping, w: &FusionSet, a: &Architecture) -> Vec<Violation> {
    match bind(m, w, a) {
        Ok(_) => Vec::new(),
        Err(v) => v,
    }
}

pub fn bind(m: &Mapping, w: &FusionSet, a: &Architecture) -> Result<BoundMapping, Vec<Violation>> {
    let mut errs = Vec::new();
    let mut bad = |field: String, rule: &'static str, message: String| {
        errs.push(Violation { field, rule, message });
    };
    let last = w.last_layer();
    let k = a.innermost();

    let mut partitions = Vec::new();
    let mut last_tile: BTreeMap<usize, i64> = BTreeMap::new();
    for (i, p) in m.inter.partitions.iter().enumerate() {
        let field = format!("partitions[{i}]");
        let Some(dim) = last.rank_dim(&p.rank) else {
            bad(field, "partition-rank", format!("rank {} is not a rank of the last einsum {}", p.rank, last.name));
            continue;
        };
        let shape = last.shape[dim];
        if p.tile_size < 1 || p.tile_size > shape {
            bad(field, "partition-tile", format!("tile size {} of {} must lie in [1, {shape}]", p.tile_size, p.rank));
            continue;
        }
        if let Some(&prev) = last_tile.get(&dim) {
            if p.tile_size >= prev {
                bad(
                    field,
                    "partition-order",
                    format!("repeated rank {} needs a smaller tile than {prev}", p.rank),
                );
                continue;
            }
        }
        last_tile.insert(dim, p.tile_size);
        partitions.push((dim, p.tile_size));
    }
    let n = m.inter.partitions.len();

    let nt = w.tensors().len();
    let mut retention_level = vec![usize::MAX; nt];
    let mut retention_depth = vec![0; nt];
    for (i, r) in m.retention.iter().enumerate() {
        let field = format!("retention[{i}]");
        let Some(t) = w.tensor_id(&r.tensor) else {
            bad(field, "retention-tensor", format!("unknown tensor {}", r.tensor));
            continue;
        };
        if retention_level[t] != usize::MAX {
            bad(field, "retention-duplicate", format!("tensor {} has more than one retention choice", r.tensor));
            continue;
        }
        let Some(level) = a.level_index(&r.level) else {
            bad(field, "retention-level", format!("unknown buffer level {}", r.level));
            continue;
        };
        let depth = r.depth.resolve(n);
        if depth > n {
            bad(
                field.clone(),
                "retention-depth",
                format!("depth {depth} of {} exceeds the {n} inter-layer partitions", r.tensor),
            );
        }
        if level == 0 && w.tensor(t).role == TensorRole::Intermediate {
            bad(
                field,
                "intermediate-offchip",
                format!(
                    "intermediate {} cannot be retained at the off-chip level {}: intermediates exist only on-chip and evicted data is recomputed",
                    r.tensor, r.level
                ),
            );
        }
        retention_level[t] = level;
        retention_depth[t] = depth.min(n);
    }
    for (t, info) in w.tensors().iter().enumerate() {
        if retention_level[t] == usize::MAX && !m.retention.iter().any(|r| r.tensor == info.name) {
            bad("retention".into(), "retention-missing", format!("tensor {} has no retention choice", info.name));
        }
    }

    for name in m.intra.keys() {
        if w.layer_id(name).is_none() {
            bad(format!("intra.{name}"), "intra-einsum", format!("unknown einsum {name}"));
        }
    }
    let mut nests = Vec::with_capacity(w.layers().len());
    for (li, layer) in w.layers().iter().enumerate() {
        let user = m.intra.get(&layer.name).map(Vec::as_slice).unwrap_or(&[]);
        let floor = layer
            .tensors()
            .filter_map(|t| retention_level.get(t).copied().filter(|&l| l != usize::MAX))
            .max()
            .unwrap_or(0);
        let mut nest = Vec::with_capacity(user.len() + layer.shape.len());
        let mut enclosing: Vec<i64> = (0..layer.shape.len())
            .map(|d| {
                let nominal = if li + 1 == w.layers().len() {
                    partitions.iter().filter(|p| p.0 == d).map(|p| p.1).min()
                } else {
                    None
                };
                nominal.unwrap_or(layer.shape[d])
            })
            .collect();
        let mut prev_level = 0;
        let mut fan: BTreeMap<usize, i64> = BTreeMap::new();
        for (j, l) in user.iter().enumerate() {
            let field = format!("intra.{}[{j}]", layer.name);
            let Some(dim) = layer.rank_dim(&l.rank) else {
                bad(field, "intra-rank", format!("rank {} is not a rank of {}", l.rank, layer.name));
                continue;
            };
            let Some(level) = a.level_index(&l.level) else {
                bad(field, "intra-level", format!("unknown buffer level {}", l.level));
                continue;
            };
            if l.tile_size < 1 {
                bad(field, "intra-tile", format!("tile size {} must be positive", l.tile_size));
                continue;
            }
            if let Some(prev) = nest.iter().rev().find(|b: &&BoundLoop| b.dim == dim) {
                if l.tile_size >= prev.tile {
                    bad(
                        field,
                        "intra-repeat",
                        format!("repeated rank {} needs a tile smaller than {}", l.rank, prev.tile),
                    );
                    continue;
                }
            }
            if level < prev_level {
                bad(field, "intra-order", "loops must be listed from the outermost level inward".into());
                continue;
            }
            if level < floor {
                bad(
                    field,
                    "intra-retention",
                    format!(
                        "loop at level {} sits above a tensor retained at level {}",
                        l.level, a.levels[floor].name
                    ),
                );
                continue;
            }
            if l.kind == LoopKind::Spatial && level == k && l.tile_size != 1 {
                bad(
                    field,
                    "spatial-compute-tile",
                    "spatial loops at the innermost level hand one index to each compute unit (tile size 1)".into(),
                );
                continue;
            }
            prev_level = level;
            let radix = ceil_div(enclosing[dim], l.tile_size);
            enclosing[dim] = l.tile_size.min(enclosing[dim]);
            if l.kind == LoopKind::Spatial {
                *fan.entry(level).or_insert(1) *= radix;
            }
            nest.push(BoundLoop { dim, tile: l.tile_size, kind: l.kind, level, radix });
        }
        for (level, f) in fan {
            let limit = a.levels[level].fanout;
            if f as u64 > limit {
                bad(
                    format!("intra.{}", layer.name),
                    "spatial-fanout",
                    format!("spatial loops at {} need {f} children but the fanout is {limit}", a.levels[level].name),
                );
            }
        }
        for d in 0..layer.shape.len() {
            if enclosing[d] > 1 {
                nest.push(BoundLoop { dim: d, tile: 1, kind: LoopKind::Temporal, level: k, radix: enclosing[d] });
            }
        }
        nests.push(nest);
    }

    if m.inter.parallelism == Parallelism::Pipeline && w.layers().len() as u64 > a.compute.pipeline_stages_supported {
        bad(
            "parallelism".into(),
            "pipeline-stages",
            format!(
                "{} layers need {} pipeline stages but the compute array supports {}",
                w.layers().len(),
                w.layers().len(),
                a.compute.pipeline_stages_supported
            ),
        );
    }

    let deps = last_layer_dependencies(w);
    let relevant = deps.iter().map(|d| partitions.iter().map(|&(dim, _)| d.contains(&dim)).collect()).collect();
    if errs.is_empty() {
        Ok(BoundMapping {
            partitions,
            parallelism: m.inter.parallelism,
            retention_level,
            retention_depth,
            relevant,
            nests,
            innermost: k,
        })
    } else {
        Err(errs)
    }
}

/// For each tensor, the last-layer dims its tiles depend on.
pub fn last_layer_dependencies(w: &FusionSet) -> Vec<BTreeSet<usize>> {
    let nl = w.layers().len();
    let mut op_deps: Vec<Vec<BTreeSet<usize>>> = w.layers().iter().map(|l| vec![BTreeSet::new(); l.shape.len()]).collect();
    for (k, deps) in op_deps[nl - 1].iter_mut().enumerate() {
        deps.insert(k);
    }
    for l in (0..nl - 1).rev() {
        let layer = w.layer(l);
        for (j, &k) in layer.output_dims.iter().enumerate() {
            let mut d = BTreeSet::new();
            for &c in &w.tensor(layer.output).consumers {
                let e = &w.layer(c).relation(layer.output).expect("consumer reads tensor").exprs()[j];
                for &(_, kk) in &e.terms {
                    d.extend(op_deps[c][kk].iter().copied());
                }
            }
            op_deps[l][k] = d;
        }
    }
    (0..w.tensors().len())
        .map(|t| {
            let mut out = BTreeSet::new();
            for l in w.users(t) {
                for e in w.layer(l).relation(t).expect("user touches tensor").exprs() {
                    for &(_, k) in &e.terms {
                        out.extend(op_deps[l][k].iter().copied());
                    }
                }
            }
            out
        })
        .collect()
}

pub(crate) fn ceil_div(a: i64, b: i64) -> i64 {
    (a + b - 1) / b
}

/// One chunk of a nested chunking: loop indices and the per-dim range.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Chunk {
    pub index: Vec<i64>,
    pub ranges: Vec<(i64, i64)>,
}

/// Nested chunking of `base` by `(dim, tile)` loops, outermost first, in
/// lexicographic index order. Each loop splits the current range of its dim
/// into `ceil(extent / tile)` pieces; the last piece may be short.
pub fn nested_chunks(base: &[(i64, i64)], loops: &[(usize, i64)]) -> Vec<Chunk> {
    let mut out = Vec::new();
    let mut index = Vec::with_capacity(loops.len());
    let mut ranges = base.to_vec();
    chunk_rec(loops, &mut index, &mut ranges, &mut out);
    out
}

fn chunk_rec(loops: &[(usize, i64)], index: &mut Vec<i64>, ranges: &mut Vec<(i64, i64)>, out: &mut Vec<Chunk>) {
    let Some(&(dim, tile)) = loops.first() else {
        out.push(Chunk { index: index.clone(), ranges: ranges.clone() });
        return;
    };
    let (lo, hi) = ranges[dim];
    let trips = ceil_div(hi - lo + 1, tile);
    for k in 0..trips {
        let s = lo + k * tile;
        ranges[dim] = (s, (s + tile - 1).min(hi));
        index.push(k);
        chunk_rec(&loops[1..], index, ranges, out);
        index.pop();
    }
    ranges[dim] = (lo, hi);
}

/// Iteration coordinates of the inter-layer schedule in raster order.
pub fn iteration_space(m: &Mapping, w: &FusionSet) -> Vec<Vec<i64>> {
    let last = w.last_layer();
    let loops: Vec<(usize, i64)> = m
        .inter
        .partitions
        .iter()
        .filter_map(|p| last.rank_dim(&p.rank).map(|d| (d, p.tile_size.max(1))))
        .collect();
    let base: Vec<(i64, i64)> = last.shape.iter().map(|&s| (0, s - 1)).collect();
    nested_chunks(&base, &loops).into_iter().map(|c| c.index).collect()
}
