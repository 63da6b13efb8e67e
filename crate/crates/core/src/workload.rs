//! Fusion sets written as chains of extended Einsums.
//!
//! A workload file is a JSON object with one entry per layer:
//!
//! ```json
//! { "einsums": [ {
//!     "name": "Conv1",
//!     "output": { "tensor": "Fmap2", "indices": ["M1", "P1"] },
//!     "inputs": [
//!       { "tensor": "Fmap1", "indices": ["C1", [[1, "P1"], [1, "R1"], 0]], "ranks": ["C1", "H1"] },
//!       { "tensor": "Filter1", "indices": ["M1", "C1", "R1"] }
//!     ],
//!     "rank_shapes": { "M1": 4, "P1": 6, "C1": 3, "H1": 8, "R1": 3 }
//! } ] }
//! ```
//!
//! An index expression is either a bare rank name or `[[coeff, rank]..., constant]`.
//! The optional `ranks` list names the data ranks of a tensor so their shapes
//! can be declared in `rank_shapes`; a data rank without a declared shape gets
//! the smallest extent that covers every access.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{AffineRelation, Region, Space};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("invalid workload: {0}")]
    Schema(String),
    #[error("shape inconsistency for rank {rank} ({tensors}): {detail}")]
    ShapeInconsistency { rank: String, tensors: String, detail: String },
    #[error("broken chain at tensor {tensor}: {detail}")]
    BrokenChain { tensor: String, detail: String },
    #[error("unknown rank {rank} in einsum {einsum}")]
    UnknownRank { rank: String, einsum: String },
    #[error("unknown tensor {tensor} in einsum {einsum}")]
    UnknownTensor { tensor: String, einsum: String },
}

impl WorkloadError {
    pub(crate) fn from_json(e: serde_json::Error) -> Self {
        match e.classify() {
            serde_json::error::Category::Syntax | serde_json::error::Category::Eof => {
                WorkloadError::Syntax { line: e.line(), column: e.column(), message: e.to_string() }
            }
            _ => WorkloadError::Schema(e.to_string()),
        }
    }
}

/// A rank name such as `P2` or `C1`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RankId(Arc<str>);

impl RankId {
    pub fn new(name: &str) -> Self {
        RankId(Arc::from(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for RankId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for RankId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RankId {
    fn from(s: &str) -> Self {
        RankId::new(s)
    }
}

impl Serialize for RankId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for RankId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.is_empty() {
            return Err(de::Error::custom("rank name must be nonempty"));
        }
        Ok(RankId::new(&s))
    }
}

/// `sum(coeff * index) + constant`.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct AffineExpr {
    pub terms: Vec<(i64, RankId)>,
    pub constant: i64,
}

impl AffineExpr {
    pub fn index(rank: impl Into<RankId>) -> Self {
        AffineExpr { terms: vec![(1, rank.into())], constant: 0 }
    }

    pub fn new(terms: Vec<(i64, RankId)>, constant: i64) -> Self {
        AffineExpr { terms, constant }
    }

    /// The rank when the expression is exactly one index with coefficient 1.
    pub fn plain_index(&self) -> Option<&RankId> {
        match self.terms.as_slice() {
            [(1, r)] if self.constant == 0 => Some(r),
            _ => None,
        }
    }

    pub fn mentions(&self, rank: &RankId) -> bool {
        self.terms.iter().any(|(_, r)| r == rank)
    }

    /// Smallest and largest value over indices ranging in `[0, shape)`.
    fn value_range(&self, shapes: &BTreeMap<RankId, i64>) -> (i64, i64) {
        let mut lo = self.constant;
        let mut hi = self.constant;
        for (c, r) in &self.terms {
            let top = c * (shapes[r] - 1);
            lo += top.min(0);
            hi += top.max(0);
        }
        (lo, hi)
    }
}

impl fmt::Display for AffineExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (c, r) in &self.terms {
            let name = r.as_str().to_lowercase();
            match (*c, first) {
                (1, true) => write!(f, "{name}")?,
                (1, false) => write!(f, "+{name}")?,
                (c, true) => write!(f, "{c}{name}")?,
                (c, false) if c < 0 => write!(f, "{c}{name}")?,
                (c, false) => write!(f, "+{c}{name}")?,
            }
            first = false;
        }
        if self.constant != 0 || first {
            if first || self.constant < 0 {
                write!(f, "{}", self.constant)?;
            } else {
                write!(f, "+{}", self.constant)?;
            }
        }
        Ok(())
    }
}

impl Serialize for AffineExpr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.source_form())
    }
}

impl AffineExpr {
    /// `2*P1+R1-1`; parsed back by [`AffineExpr::parse`].
    pub fn source_form(&self) -> String {
        let mut out = String::new();
        for (c, r) in &self.terms {
            if !out.is_empty() || *c < 0 {
                out.push(if *c < 0 { '-' } else { '+' });
            }
            if c.abs() != 1 {
                out.push_str(&format!("{}*", c.abs()));
            }
            out.push_str(r.as_str());
        }
        if self.constant != 0 || out.is_empty() {
            if !out.is_empty() && self.constant > 0 {
                out.push('+');
            }
            out.push_str(&self.constant.to_string());
        }
        out
    }

    /// Sums of `c*RANK`, `RANK` and integer terms joined by `+` or `-`.
    pub fn parse(text: &str) -> Result<Self, String> {
        let text: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        if text.is_empty() {
            return Err("empty index expression".into());
        }
        let mut terms = Vec::new();
        let mut constant = 0;
        let mut rest = text.as_str();
        while !rest.is_empty() {
            let (sign, body) = match rest.as_bytes()[0] {
                b'+' => (1, &rest[1..]),
                b'-' => (-1, &rest[1..]),
                _ => (1, rest),
            };
            let end = body.find(['+', '-']).unwrap_or(body.len());
            let (term, tail) = body.split_at(end);
            rest = tail;
            if term.is_empty() {
                return Err(format!("dangling sign in {text:?}"));
            }
            if let Ok(k) = term.parse::<i64>() {
                constant += sign * k;
                continue;
            }
            let (coeff, rank) = match term.split_once('*') {
                Some((c, r)) => (c.parse::<i64>().map_err(|_| format!("bad coefficient {c:?} in {text:?}"))?, r),
                None => (1, term),
            };
            if rank.is_empty() || rank.starts_with(|c: char| c.is_ascii_digit()) {
                return Err(format!("bad rank name {rank:?} in {text:?}"));
            }
            terms.push((sign * coeff, RankId::new(rank)));
        }
        Ok(AffineExpr { terms, constant })
    }
}

impl<'de> Deserialize<'de> for AffineExpr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct ExprVisitor;

        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Item {
            Term((i64, RankId)),
            Constant(i64),
        }

        impl<'de> Visitor<'de> for ExprVisitor {
            type Value = AffineExpr;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an expression like \"2*P+R\" or [[coeff, rank]..., constant]")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<AffineExpr, E> {
                AffineExpr::parse(v).map_err(E::custom)
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<AffineExpr, A::Error> {
                let mut items = Vec::new();
                while let Some(item) = seq.next_element::<Item>()? {
                    items.push(item);
                }
                let Some(Item::Constant(constant)) = items.pop() else {
                    return Err(de::Error::custom("index expression must end with an integer constant"));
                };
                let mut terms = Vec::with_capacity(items.len());
                for item in items {
                    match item {
                        Item::Term(t) => terms.push(t),
                        Item::Constant(_) => {
                            return Err(de::Error::custom("only the last element may be a constant"))
                        }
                    }
                }
                Ok(AffineExpr { terms, constant })
            }
        }

        d.deserialize_any(ExprVisitor)
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorProjection {
    pub tensor: String,
    pub indices: Vec<AffineExpr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranks: Option<Vec<RankId>>,
}

impl TensorProjection {
    pub fn new(tensor: &str, indices: Vec<AffineExpr>) -> Self {
        TensorProjection { tensor: tensor.to_string(), indices, ranks: None }
    }

    pub fn with_ranks(mut self, ranks: &[&str]) -> Self {
        self.ranks = Some(ranks.iter().map(|r| RankId::new(r)).collect());
        self
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Einsum {
    pub name: String,
    pub output: TensorProjection,
    pub inputs: Vec<TensorProjection>,
    pub rank_shapes: BTreeMap<RankId, i64>,
}

impl Einsum {
    fn projections(&self) -> impl Iterator<Item = &TensorProjection> {
        std::iter::once(&self.output).chain(&self.inputs)
    }

    /// Index ranks in order of first appearance, output first.
    pub fn index_ranks(&self) -> Vec<RankId> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for p in self.projections() {
            for e in &p.indices {
                for (_, r) in &e.terms {
                    if seen.insert(r.clone()) {
                        out.push(r.clone());
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub enum TensorRole {
    ExternalInput,
    Filter,
    Intermediate,
    ExternalOutput,
}

impl TensorRole {
    /// Whether the tensor lives in off-chip memory.
    pub fn is_backed(self) -> bool {
        self != TensorRole::Intermediate
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum ReuseClass {
    Full,
    Conv,
    None,
}

pub type TensorId = usize;
pub type LayerId = usize;

#[derive(Clone, Debug)]
pub struct TensorInfo {
    pub name: String,
    pub role: TensorRole,
    pub space: Space,
    pub shape: Vec<i64>,
    pub producer: Option<LayerId>,
    pub consumers: Vec<LayerId>,
}

impl TensorInfo {
    pub fn size(&self) -> u64 {
        self.shape.iter().map(|&s| s as u64).product()
    }
}

/// One Einsum with names resolved against its fusion set.
#[derive(Clone, Debug)]
pub struct Layer {
    pub name: String,
    pub space: Space,
    pub shape: Vec<i64>,
    pub output: TensorId,
    pub inputs: Vec<TensorId>,
    /// Operation-space dim indexing each output dim.
    pub output_dims: Vec<usize>,
    relations: Vec<(TensorId, AffineRelation)>,
}

impl Layer {
    /// Output first, then inputs in declaration order.
    pub fn tensors(&self) -> impl Iterator<Item = TensorId> + '_ {
        self.relations.iter().map(|(t, _)| *t)
    }

    pub fn relation(&self, t: TensorId) -> Option<&AffineRelation> {
        self.relations.iter().find(|(id, _)| *id == t).map(|(_, r)| r)
    }

    pub fn relations(&self) -> &[(TensorId, AffineRelation)] {
        &self.relations
    }

    pub fn operation_space(&self) -> Region {
        Region::full(self.space.clone(), &self.shape)
    }

    pub fn op_count(&self) -> u64 {
        self.shape.iter().map(|&s| s as u64).product()
    }

    pub fn rank_dim(&self, rank: &RankId) -> Option<usize> {
        self.space.position(rank)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkloadFile {
    einsums: Vec<Einsum>,
}

/// An ordered chain of Einsums linked by intermediate tensors.
#[derive(Clone, Debug)]
pub struct FusionSet {
    einsums: Vec<Einsum>,
    tensors: Vec<TensorInfo>,
    layers: Vec<Layer>,
}

impl PartialEq for FusionSet {
    fn eq(&self, other: &Self) -> bool {
        self.einsums == other.einsums
    }
}

pub fn parse_workload(text: &str) -> Result<FusionSet, WorkloadError> {
    let file: WorkloadFile = serde_json::from_str(text).map_err(WorkloadError::from_json)?;
    FusionSet::new(file.einsums)
}

impl FusionSet {
    pub fn new(einsums: Vec<Einsum>) -> Result<Self, WorkloadError> {
        Builder::default().build(einsums)
    }

    pub fn to_json(&self) -> String {
        let file = WorkloadFile { einsums: self.einsums.clone() };
        serde_json::to_string_pretty(&file).expect("workload serializes")
    }

    pub fn einsums(&self) -> &[Einsum] {
        &self.einsums
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, id: LayerId) -> &Layer {
        &self.layers[id]
    }

    pub fn last_layer(&self) -> &Layer {
        self.layers.last().expect("fusion sets are nonempty")
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    pub fn tensor(&self, id: TensorId) -> &TensorInfo {
        &self.tensors[id]
    }

    pub fn tensor_id(&self, name: &str) -> Option<TensorId> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn layer_id(&self, name: &str) -> Option<LayerId> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Layers that read or write the tensor.
    pub fn users(&self, t: TensorId) -> impl Iterator<Item = LayerId> + '_ {
        let info = &self.tensors[t];
        info.producer.into_iter().chain(info.consumers.iter().copied())
    }

    pub fn total_ops(&self) -> u64 {
        self.layers.iter().map(Layer::op_count).sum()
    }

    fn find_layer(&self, einsum: &str) -> Result<&Layer, WorkloadError> {
        self.layers.iter().find(|l| l.name == einsum).ok_or_else(|| WorkloadError::Schema(format!(
            "no einsum named {einsum}"
        )))
    }

    /// How partitioning `rank` makes each tensor's tiles overlap.
    pub fn classify_reuse(
        &self,
        einsum: &str,
        rank: &RankId,
    ) -> Result<BTreeMap<String, ReuseClass>, WorkloadError> {
        let e = self.einsums.iter().find(|e| e.name == einsum).ok_or_else(|| {
            WorkloadError::Schema(format!("no einsum named {einsum}"))
        })?;
        if !e.index_ranks().contains(rank) {
            return Err(WorkloadError::UnknownRank { rank: rank.to_string(), einsum: einsum.into() });
        }
        let mut out = BTreeMap::new();
        for p in e.projections() {
            let mut class = ReuseClass::Full;
            for expr in &p.indices {
                if expr.mentions(rank) {
                    class = if expr.terms.len() > 1 { ReuseClass::Conv } else { ReuseClass::None };
                    break;
                }
            }
            out.insert(p.tensor.clone(), class);
        }
        Ok(out)
    }

    /// Maps each operation point of `einsum` to the point of `tensor` it accesses.
    pub fn data_relation(&self, einsum: &str, tensor: &str) -> Result<&AffineRelation, WorkloadError> {
        let layer = self.find_layer(einsum)?;
        self.tensor_id(tensor)
            .and_then(|t| layer.relation(t))
            .ok_or_else(|| WorkloadError::UnknownTensor { tensor: tensor.into(), einsum: einsum.into() })
    }

    pub fn operation_space(&self, einsum: &str) -> Result<Region, WorkloadError> {
        Ok(self.find_layer(einsum)?.operation_space())
    }
}

#[derive(Default)]
struct Builder {
    tensors: Vec<TensorInfo>,
    /// Declared shape per tensor dim, and the projection that declared it.
    declared: Vec<Vec<Option<(i64, String)>>>,
    /// Largest value accessed per tensor dim.
    needed: Vec<Vec<i64>>,
    dim_names: Vec<Vec<RankId>>,
}

impl Builder {
    fn build(mut self, einsums: Vec<Einsum>) -> Result<FusionSet, WorkloadError> {
        if einsums.is_empty() {
            return Err(WorkloadError::Schema("a fusion set needs at least one einsum".into()));
        }
        let mut names = BTreeSet::new();
        let mut global_shapes: BTreeMap<RankId, (i64, String)> = BTreeMap::new();
        for e in &einsums {
            if !names.insert(e.name.clone()) {
                return Err(WorkloadError::Schema(format!("duplicate einsum name {}", e.name)));
            }
            check_einsum(e)?;
            for (r, &s) in &e.rank_shapes {
                match global_shapes.get(r) {
                    Some((prev, who)) if *prev != s => {
                        return Err(WorkloadError::ShapeInconsistency {
                            rank: r.to_string(),
                            tensors: format!("{who}, {}", e.name),
                            detail: format!("shape {prev} in {who} but {s} in {}", e.name),
                        });
                    }
                    Some(_) => {}
                    None => {
                        global_shapes.insert(r.clone(), (s, e.name.clone()));
                    }
                }
            }
        }

        // Tensor discovery and producer/consumer structure.
        let mut by_name: BTreeMap<String, TensorId> = BTreeMap::new();
        for (li, e) in einsums.iter().enumerate() {
            for (pi, p) in e.inputs.iter().enumerate() {
                let t = self.tensor_for(&mut by_name, p, &e.name)?;
                if self.tensors[t].consumers.contains(&li) {
                    return Err(WorkloadError::Schema(format!(
                        "tensor {} is read twice by einsum {}",
                        p.tensor, e.name
                    )));
                }
                self.tensors[t].consumers.push(li);
                if pi == 0 && self.tensors[t].producer.is_none() {
                    self.tensors[t].role = TensorRole::ExternalInput;
                }
            }
            let t = self.tensor_for(&mut by_name, &e.output, &e.name)?;
            let info = &mut self.tensors[t];
            if info.producer.is_some() {
                return Err(WorkloadError::Schema(format!("tensor {} is produced twice", e.output.tensor)));
            }
            if !info.consumers.is_empty() {
                return Err(WorkloadError::BrokenChain {
                    tensor: e.output.tensor.clone(),
                    detail: format!("read before it is produced by {}", e.name),
                });
            }
            info.producer = Some(li);
        }
        let last = einsums.len() - 1;
        for info in &mut self.tensors {
            match info.producer {
                Some(p) if p == last => info.role = TensorRole::ExternalOutput,
                Some(p) if info.consumers.is_empty() => {
                    return Err(WorkloadError::BrokenChain {
                        tensor: info.name.clone(),
                        detail: format!("output of {} is never consumed", einsums[p].name),
                    });
                }
                Some(_) => info.role = TensorRole::Intermediate,
                None => {}
            }
        }

        // Tensor dim shapes: declared shapes must agree; accesses must fit.
        for e in &einsums {
            for p in e.projections() {
                let t = by_name[&p.tensor];
                for (k, expr) in p.indices.iter().enumerate() {
                    let (lo, hi) = expr.value_range(&e.rank_shapes);
                    if lo < 0 {
                        return Err(WorkloadError::ShapeInconsistency {
                            rank: self.dim_names[t][k].to_string(),
                            tensors: p.tensor.clone(),
                            detail: format!("index {expr} in {} reaches {lo} < 0", e.name),
                        });
                    }
                    self.needed[t][k] = self.needed[t][k].max(hi);
                    let decl = match p.ranks.as_ref().map(|rs| &rs[k]) {
                        Some(r) => Some(e.rank_shapes[r]),
                        None => expr.plain_index().map(|r| e.rank_shapes[r]),
                    };
                    if let Some(s) = decl {
                        match &self.declared[t][k] {
                            Some((prev, who)) if *prev != s => {
                                return Err(WorkloadError::ShapeInconsistency {
                                    rank: self.dim_names[t][k].to_string(),
                                    tensors: p.tensor.clone(),
                                    detail: format!(
                                        "dim {k} is {prev} in {who} but {s} in {}",
                                        e.name
                                    ),
                                });
                            }
                            Some(_) => {}
                            None => self.declared[t][k] = Some((s, e.name.clone())),
                        }
                    }
                }
            }
        }
        for t in 0..self.tensors.len() {
            let mut shape = Vec::with_capacity(self.needed[t].len());
            for (k, &hi) in self.needed[t].iter().enumerate() {
                let s = match &self.declared[t][k] {
                    Some((s, who)) => {
                        if hi >= *s {
                            return Err(WorkloadError::ShapeInconsistency {
                                rank: self.dim_names[t][k].to_string(),
                                tensors: self.tensors[t].name.clone(),
                                detail: format!(
                                    "declared {s} in {who} but accesses reach index {hi} (needs >= {})",
                                    hi + 1
                                ),
                            });
                        }
                        *s
                    }
                    None => hi + 1,
                };
                shape.push(s);
            }
            self.tensors[t].shape = shape;
            self.tensors[t].space = Space::new(unique_names(&self.dim_names[t]));
        }

        let mut layers = Vec::with_capacity(einsums.len());
        for e in &einsums {
            let ranks = e.index_ranks();
            let space = Space::new(ranks.iter().cloned());
            let shape: Vec<i64> = ranks.iter().map(|r| e.rank_shapes[r]).collect();
            let output = by_name[&e.output.tensor];
            let output_dims = e
                .output
                .indices
                .iter()
                .map(|x| space.position(x.plain_index().expect("checked")).expect("index rank"))
                .collect();
            let mut relations = Vec::new();
            for p in e.projections() {
                let t = by_name[&p.tensor];
                let rel = AffineRelation::new(space.clone(), self.tensors[t].space.clone(), &p.indices)
                    .map_err(|err| WorkloadError::Schema(format!("{}: {err}", e.name)))?;
                relations.push((t, rel));
            }
            layers.push(Layer {
                name: e.name.clone(),
                space,
                shape,
                output,
                inputs: e.inputs.iter().map(|p| by_name[&p.tensor]).collect(),
                output_dims,
                relations,
            });
        }
        Ok(FusionSet { einsums, tensors: self.tensors, layers })
    }

    fn tensor_for(
        &mut self,
        by_name: &mut BTreeMap<String, TensorId>,
        p: &TensorProjection,
        einsum: &str,
    ) -> Result<TensorId, WorkloadError> {
        if let Some(&t) = by_name.get(&p.tensor) {
            if self.needed[t].len() != p.indices.len() {
                return Err(WorkloadError::ShapeInconsistency {
                    rank: "-".into(),
                    tensors: p.tensor.clone(),
                    detail: format!(
                        "{} indexes {} dims but the tensor has {}",
                        einsum,
                        p.indices.len(),
                        self.needed[t].len()
                    ),
                });
            }
            return Ok(t);
        }
        let t = self.tensors.len();
        let names: Vec<RankId> = p
            .indices
            .iter()
            .enumerate()
            .map(|(k, e)| match (&p.ranks, e.plain_index()) {
                (Some(rs), _) => rs[k].clone(),
                (None, Some(r)) => r.clone(),
                (None, None) => RankId::new(&format!("{}[{k}]", p.tensor)),
            })
            .collect();
        self.tensors.push(TensorInfo {
            name: p.tensor.clone(),
            role: TensorRole::Filter,
            space: Space::new(Vec::new()),
            shape: Vec::new(),
            producer: None,
            consumers: Vec::new(),
        });
        self.declared.push(vec![None; p.indices.len()]);
        self.needed.push(vec![0; p.indices.len()]);
        self.dim_names.push(names);
        by_name.insert(p.tensor.clone(), t);
        Ok(t)
    }
}

fn unique_names(names: &[RankId]) -> Vec<RankId> {
    let mut seen = BTreeSet::new();
    names
        .iter()
        .enumerate()
        .map(|(k, n)| {
            if seen.insert(n.clone()) {
                n.clone()
            } else {
                RankId::new(&format!("{n}#{k}"))
            }
        })
        .collect()
}

fn check_einsum(e: &Einsum) -> Result<(), WorkloadError> {
    if e.name.is_empty() {
        return Err(WorkloadError::Schema("einsum name must be nonempty".into()));
    }
    for (r, &s) in &e.rank_shapes {
        if s <= 0 {
            return Err(WorkloadError::ShapeInconsistency {
                rank: r.to_string(),
                tensors: e.name.clone(),
                detail: format!("shape must be positive, got {s}"),
            });
        }
    }
    let mut used: BTreeSet<&RankId> = BTreeSet::new();
    let mut tensors = BTreeSet::new();
    for p in e.projections() {
        if !tensors.insert(&p.tensor) {
            return Err(WorkloadError::Schema(format!(
                "tensor {} appears twice in einsum {}",
                p.tensor, e.name
            )));
        }
        if let Some(rs) = &p.ranks {
            if rs.len() != p.indices.len() {
                return Err(WorkloadError::Schema(format!(
                    "{}: tensor {} lists {} ranks for {} indices",
                    e.name,
                    p.tensor,
                    rs.len(),
                    p.indices.len()
                )));
            }
            for r in rs {
                if !e.rank_shapes.contains_key(r) {
                    return Err(WorkloadError::UnknownRank { rank: r.to_string(), einsum: e.name.clone() });
                }
                used.insert(r);
            }
        }
        for expr in &p.indices {
            if expr.terms.len() > 2 {
                return Err(WorkloadError::Schema(format!(
                    "{}: index {expr} of {} has more than two terms",
                    e.name, p.tensor
                )));
            }
            let mut seen = BTreeSet::new();
            for (c, r) in &expr.terms {
                if *c == 0 {
                    return Err(WorkloadError::Schema(format!(
                        "{}: zero coefficient in index {expr} of {}",
                        e.name, p.tensor
                    )));
                }
                if !seen.insert(r) {
                    return Err(WorkloadError::Schema(format!(
                        "{}: rank {r} repeated in index {expr} of {}",
                        e.name, p.tensor
                    )));
                }
                if !e.rank_shapes.contains_key(r) {
                    return Err(WorkloadError::UnknownRank { rank: r.to_string(), einsum: e.name.clone() });
                }
                used.insert(r);
            }
        }
    }
    let mut out_ranks = BTreeSet::new();
    for expr in &e.output.indices {
        let Some(r) = expr.plain_index() else {
            return Err(WorkloadError::Schema(format!(
                "{}: output index {expr} must be a plain rank index",
                e.name
            )));
        };
        if !out_ranks.insert(r) {
            return Err(WorkloadError::Schema(format!("{}: output rank {r} repeated", e.name)));
        }
        if e.output.ranks.as_ref().is_some_and(|rs| rs.iter().any(|n| n != r && e.rank_shapes[n] != e.rank_shapes[r])) {
            return Err(WorkloadError::Schema(format!(
                "{}: output data ranks must match their index shapes",
                e.name
            )));
        }
    }
    for r in e.rank_shapes.keys() {
        if !used.contains(r) {
            return Err(WorkloadError::Schema(format!(
                "{}: rank {r} is not used by any index or listed in a projection's \"ranks\"",
                e.name
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn eq2_text(h: i64) -> String {
        format!(
            r#"{{ "einsums": [ {{
                "name": "Conv",
                "output": {{ "tensor": "Output", "indices": ["M", "P"] }},
                "inputs": [
                    {{ "tensor": "Input", "indices": ["C", [[1, "P"], [1, "R"], 0]], "ranks": ["C", "H"] }},
                    {{ "tensor": "Filter", "indices": ["M", "C", "R"] }}
                ],
                "rank_shapes": {{ "M": 4, "P": 6, "C": 3, "H": {h}, "R": 3 }}
            }} ] }}"#
        )
    }

    #[test]
    fn parses_single_conv() {
        let w = parse_workload(&eq2_text(8)).unwrap();
        assert_eq!(w.layers().len(), 1);
        let input = w.tensor(w.tensor_id("Input").unwrap());
        assert_eq!(input.role, TensorRole::ExternalInput);
        assert_eq!(input.shape, vec![3, 8]);
        assert_eq!(w.tensor(w.tensor_id("Filter").unwrap()).role, TensorRole::Filter);
        assert_eq!(w.tensor(w.tensor_id("Output").unwrap()).role, TensorRole::ExternalOutput);
        let ranks: Vec<&str> = w.layer(0).space.ranks().iter().map(|r| r.as_str()).collect();
        assert_eq!(ranks, ["M", "P", "C", "R"]);
    }

    #[test]
    fn short_halo_is_rejected() {
        match parse_workload(&eq2_text(7)) {
            Err(WorkloadError::ShapeInconsistency { rank, tensors, .. }) => {
                assert_eq!(rank, "H");
                assert_eq!(tensors, "Input");
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn syntax_errors_report_position() {
        let err = parse_workload("{ \"einsums\": [ }").unwrap_err();
        assert!(matches!(err, WorkloadError::Syntax { line: 1, .. }), "{err}");
    }

    #[test]
    fn dangling_intermediate_is_a_broken_chain() {
        let text = r#"{ "einsums": [
            { "name": "A", "output": { "tensor": "X", "indices": ["P1"] },
              "inputs": [ { "tensor": "In", "indices": ["P1"] } ], "rank_shapes": { "P1": 4 } },
            { "name": "B", "output": { "tensor": "Y", "indices": ["P2"] },
              "inputs": [ { "tensor": "In2", "indices": ["P2"] } ], "rank_shapes": { "P2": 4 } }
        ] }"#;
        match parse_workload(text) {
            Err(WorkloadError::BrokenChain { tensor, .. }) => assert_eq!(tensor, "X"),
            other => panic!("expected broken chain, got {other:?}"),
        }
    }

    #[test]
    fn classify_reuse_on_conv() {
        let w = parse_workload(&eq2_text(8)).unwrap();
        let p = w.classify_reuse("Conv", &"P".into()).unwrap();
        assert_eq!(p["Input"], ReuseClass::Conv);
        assert_eq!(p["Output"], ReuseClass::None);
        assert_eq!(p["Filter"], ReuseClass::Full);
        let c = w.classify_reuse("Conv", &"C".into()).unwrap();
        assert_eq!(
            c,
            BTreeMap::from([
                ("Input".into(), ReuseClass::None),
                ("Output".into(), ReuseClass::Full),
                ("Filter".into(), ReuseClass::None)
            ])
        );
        let m = w.classify_reuse("Conv", &"M".into()).unwrap();
        assert_eq!(m["Input"], ReuseClass::Full);
        assert_eq!(m["Output"], ReuseClass::None);
        assert_eq!(m["Filter"], ReuseClass::None);
        assert!(matches!(w.classify_reuse("Conv", &"H".into()), Err(WorkloadError::UnknownRank { .. })));
    }

    #[test]
    fn data_relations_follow_projections() {
        let w = parse_workload(&eq2_text(8)).unwrap();
        let pt = [1, 2, 0, 2]; // m, p, c, r
        assert_eq!(w.data_relation("Conv", "Input").unwrap().apply(&pt), vec![0, 4]);
        assert_eq!(w.data_relation("Conv", "Output").unwrap().apply(&pt), vec![1, 2]);
        assert_eq!(w.data_relation("Conv", "Filter").unwrap().apply(&pt), vec![1, 0, 2]);
        assert!(matches!(
            w.data_relation("Conv", "Nope"),
            Err(WorkloadError::UnknownTensor { .. })
        ));
    }

    #[test]
    fn operation_space_counts() {
        let w = parse_workload(&eq2_text(8)).unwrap();
        assert_eq!(w.operation_space("Conv").unwrap().count(), 216);
        let one = eq2_text(8).replace("\"P\": 6", "\"P\": 1").replace("\"H\": 8", "\"H\": 3");
        assert_eq!(parse_workload(&one).unwrap().operation_space("Conv").unwrap().count(), 36);
        let unit = r#"{ "einsums": [ { "name": "E", "output": { "tensor": "O", "indices": ["A"] },
            "inputs": [ { "tensor": "I", "indices": ["A", "B"] } ], "rank_shapes": { "A": 1, "B": 1 } } ] }"#;
        let r = parse_workload(unit).unwrap().operation_space("E").unwrap();
        assert_eq!(r.enumerate_points(10).unwrap(), vec![vec![0, 0]]);
    }

    #[test]
    fn expression_strings_parse() {
        let e = AffineExpr::parse("2*P1 + R1 - 1").unwrap();
        assert_eq!(e, AffineExpr::new(vec![(2, RankId::new("P1")), (1, RankId::new("R1"))], -1));
        assert_eq!(e.source_form(), "2*P1+R1-1");
        assert_eq!(AffineExpr::parse(&AffineExpr::new(vec![(-3, RankId::new("X"))], 4).source_form()).unwrap().constant, 4);
        assert!(AffineExpr::parse("P+").is_err());
        assert!(AffineExpr::parse("2*3").is_err());
    }

    #[test]
    fn expression_shorthand_round_trips() {
        let w = parse_workload(&eq2_text(8)).unwrap();
        let again = parse_workload(&w.to_json()).unwrap();
        assert_eq!(w, again);
    }
}
