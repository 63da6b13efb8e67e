//! Tile-shape inference across the fusion set and per-tile action counts.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use thiserror::Error;

use crate::geometry::{producer_ops, GeometryError, IntBox, Region, StridedInterval};
use crate::mapping::{nested_chunks, BoundLoop, BoundMapping, LoopKind};
use crate::workload::{FusionSet, Layer, LayerId, TensorId, TensorRole};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("internal inconsistency: {0}")]
    Internal(String),
}

/// Per-level, per-tensor action counts.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct ActionCounts {
    /// `[level][tensor]`: words entering a level from its parent.
    pub fills: Vec<Vec<u64>>,
    /// `[level][tensor]`: words a level sends toward compute or its parent.
    pub reads: Vec<Vec<u64>>,
    /// `[level][tensor]`: words written into a level from below.
    pub updates: Vec<Vec<u64>>,
    /// `[level]`: word-hops on the network below each level.
    pub hops: Vec<u64>,
    pub compute_ops: u64,
}

impl ActionCounts {
    pub fn zeros(levels: usize, tensors: usize) -> Self {
        ActionCounts {
            fills: vec![vec![0; tensors]; levels],
            reads: vec![vec![0; tensors]; levels],
            updates: vec![vec![0; tensors]; levels],
            hops: vec![0; levels],
            compute_ops: 0,
        }
    }

    pub fn add_scaled(&mut self, other: &ActionCounts, k: u64) {
        for (a, b) in [(&mut self.fills, &other.fills), (&mut self.reads, &other.reads), (&mut self.updates, &other.updates)] {
            for (ra, rb) in a.iter_mut().zip(b) {
                for (x, y) in ra.iter_mut().zip(rb) {
                    *x += y * k;
                }
            }
        }
        for (x, y) in self.hops.iter_mut().zip(&other.hops) {
            *x += y * k;
        }
        self.compute_ops += other.compute_ops * k;
    }

    /// Words moved at a level: fills + reads + updates over all tensors.
    pub fn level_words(&self, level: usize) -> u64 {
        self.fills[level].iter().chain(&self.reads[level]).chain(&self.updates[level]).sum()
    }
}

/// One layer's share of one inter-layer iteration.
#[derive(Clone, Debug)]
pub struct LayerTile {
    pub layer: LayerId,
    pub iteration: usize,
    pub ops: Region,
    pub data: BTreeMap<TensorId, Region>,
    pub new_data: BTreeMap<TensorId, Region>,
}

#[derive(Clone, Debug)]
pub struct Iteration {
    pub coord: Vec<i64>,
    /// Indexed by layer id.
    pub layers: Vec<LayerTile>,
    /// Per tensor: retained set after this iteration (empty off-chip).
    pub retained: Vec<Region>,
    /// Per tensor: words not covered by the retained set.
    pub new_words: Vec<u64>,
    /// Per tensor: words of a retained output written back after this
    /// iteration.
    pub drained: Vec<u64>,
}

/// Back-propagates the last layer's partition tiles through the fusion set.
pub fn infer_tiles(w: &FusionSet, bm: &BoundMapping) -> Result<Vec<Iteration>, AnalysisError> {
    let last = w.last_layer();
    let base: Vec<(i64, i64)> = last.shape.iter().map(|&s| (0, s - 1)).collect();
    let chunks = nested_chunks(&base, &bm.partitions);
    let nl = w.layers().len();
    let nt = w.tensors().len();
    let mut retained: Vec<Region> = w.tensors().iter().map(|t| Region::empty(t.space.clone())).collect();
    let mut out = Vec::with_capacity(chunks.len());

    for (i, chunk) in chunks.iter().enumerate() {
        if i > 0 {
            let prev = &chunks[i - 1].index;
            for t in 0..nt {
                if !bm.same_group(t, prev, &chunk.index) {
                    retained[t] = Region::empty(w.tensor(t).space.clone());
                }
            }
        }
        let mut ops: Vec<Option<Region>> = vec![None; nl];
        let mut data: Vec<BTreeMap<TensorId, Region>> = vec![BTreeMap::new(); nl];
        let mut new_data: Vec<BTreeMap<TensorId, Region>> = vec![BTreeMap::new(); nl];
        let last_box = IntBox::new(chunk.ranges.iter().map(|&(lo, hi)| StridedInterval::range(lo, hi)));
        ops[nl - 1] = Some(Region::from_box(last.space.clone(), last_box));

        for l in (0..nl).rev() {
            if l + 1 < nl {
                let t = w.layer(l).output;
                let mut needed = Region::empty(w.tensor(t).space.clone());
                for &c in &w.tensor(t).consumers {
                    let img = w.layer(c).relation(t).expect("consumer reads tensor").image(ops[c].as_ref().expect("consumer first"))?;
                    needed = needed.union(&img)?;
                }
                let new = needed.difference(&retained[t])?;
                let produced = producer_ops(w, l, &new)?;
                data[l].insert(t, needed);
                new_data[l].insert(t, new);
                ops[l] = Some(produced);
            }
            let o = ops[l].as_ref().expect("set above");
            for &(t, ref rel) in w.layer(l).relations() {
                if w.tensor(t).role == TensorRole::Intermediate && t == w.layer(l).output {
                    continue;
                }
                data[l].insert(t, rel.image(o)?);
            }
        }

        // Tensor-level data, new data and retention update.
        let mut iter_layers = Vec::with_capacity(nl);
        let mut new_words = vec![0; nt];
        for t in 0..nt {
            let info = w.tensor(t);
            let mut touched = Region::empty(info.space.clone());
            for u in w.users(t) {
                if let Some(r) = data[u].get(&t) {
                    touched = touched.union(r)?;
                }
            }
            if info.role == TensorRole::Intermediate {
                new_words[t] = new_data[info.producer.expect("intermediates have producers")][&t].count();
            } else {
                let new = touched.difference(&retained[t])?;
                new_words[t] = new.count();
                for u in w.users(t) {
                    if data[u].contains_key(&t) {
                        let mine = data[u][&t].intersect(&new)?;
                        new_data[u].insert(t, mine);
                    }
                }
            }
            if bm.retention_level[t] >= 1 {
                retained[t] = retained[t].union(&touched)?;
            }
        }
        let is_group_end = |t: usize| i + 1 == chunks.len() || !bm.same_group(t, &chunks[i + 1].index, &chunk.index);
        let drained: Vec<u64> = (0..nt)
            .map(|t| {
                let info = w.tensor(t);
                if info.role == TensorRole::ExternalOutput && bm.retention_level[t] >= 1 && is_group_end(t) {
                    retained[t].count()
                } else {
                    0
                }
            })
            .collect();
        for (l, ((o, d), n)) in ops.into_iter().zip(data).zip(new_data).enumerate() {
            let o = o.expect("every layer visited");
            let space = w.layer(l).operation_space();
            if !o.is_subset(&space)? {
                return Err(AnalysisError::Internal(format!(
                    "ops of {} at iteration {i} leave the operation space",
                    w.layer(l).name
                )));
            }
            iter_layers.push(LayerTile { layer: l, iteration: i, ops: o, data: d, new_data: n });
        }
        out.push(Iteration { coord: chunk.index.clone(), layers: iter_layers, retained: retained.clone(), new_words, drained });
    }
    Ok(out)
}

/// Executed ops minus distinct executed ops, per layer name. Ops no consumer
/// needs (a strided window skipping trailing rows) are never run and do not
/// count.
pub fn recompute_ops(w: &FusionSet, tiles: &[Iteration]) -> Result<BTreeMap<String, u64>, AnalysisError> {
    let mut out = BTreeMap::new();
    for (l, layer) in w.layers().iter().enumerate() {
        let mut executed = 0;
        let mut seen = Region::empty(layer.space.clone());
        for it in tiles {
            let o = &it.layers[l].ops;
            executed += o.count();
            seen = seen.union(o)?;
        }
        out.insert(layer.name.clone(), executed - seen.count());
    }
    Ok(out)
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct TileSignature {
    /// Per layer, ops shifted to the origin.
    pub ops: Vec<Region>,
    /// Per tensor: `(|new data|, drained words)`.
    pub tensors: Vec<(u64, u64)>,
}

/// Iterations with equal signatures; they have equal action counts.
#[derive(Clone, Debug)]
pub struct TileClass {
    pub signature: TileSignature,
    pub iterations: Vec<usize>,
}

impl TileClass {
    pub fn multiplicity(&self) -> u64 {
        self.iterations.len() as u64
    }
}

pub fn signature(w: &FusionSet, it: &Iteration) -> TileSignature {
    let ops = it.layers.iter().map(|lt| lt.ops.normalized()).collect();
    let tensors = (0..w.tensors().len())
        .map(|t| (it.new_words[t], it.drained[t]))
        .collect();
    TileSignature { ops, tensors }
}

/// Groups iterations by signature, in order of first appearance.
pub fn dedupe_tiles(w: &FusionSet, tiles: &[Iteration]) -> Vec<TileClass> {
    let mut index: HashMap<TileSignature, usize> = HashMap::new();
    let mut out: Vec<TileClass> = Vec::new();
    for (i, it) in tiles.iter().enumerate() {
        let sig = signature(w, it);
        match index.get(&sig) {
            Some(&c) => out[c].iterations.push(i),
            None => {
                index.insert(sig.clone(), out.len());
                out.push(TileClass { signature: sig, iterations: vec![i] });
            }
        }
    }
    out
}

/// Inter-layer traffic of one iteration: fills of retained backed tensors
/// and write-back of retained outputs.
pub fn inter_counts(w: &FusionSet, bm: &BoundMapping, it: &Iteration, levels: usize) -> ActionCounts {
    let mut c = ActionCounts::zeros(levels, w.tensors().len());
    for (t, info) in w.tensors().iter().enumerate() {
        let r = bm.retention_level[t];
        if r == 0 {
            continue;
        }
        match info.role {
            TensorRole::ExternalInput | TensorRole::Filter => {
                let new = it.new_words[t];
                c.fills[r][t] += new;
                c.reads[0][t] += new;
                c.hops[0] += new;
            }
            TensorRole::ExternalOutput => {
                let d = it.drained[t];
                c.reads[r][t] += d;
                c.updates[0][t] += d;
                c.hops[0] += d;
            }
            TensorRole::Intermediate => {}
        }
    }
    c
}

/// Counts of one layer tile, local to the layer: tensor slots follow
/// `Layer::relations` (output first).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntraCounts {
    pub fills: Vec<Vec<u64>>,
    pub reads: Vec<Vec<u64>>,
    pub updates: Vec<Vec<u64>>,
    pub hops: Vec<u64>,
    pub compute_ops: u64,
    /// `[level]`: largest per-instance sum of resident tiles.
    pub peak: Vec<u64>,
    /// `[level][slot]`: largest resident tile per tensor.
    pub peak_per_slot: Vec<Vec<u64>>,
}

impl IntraCounts {
    fn zeros(levels: usize, slots: usize) -> Self {
        IntraCounts {
            fills: vec![vec![0; slots]; levels],
            reads: vec![vec![0; slots]; levels],
            updates: vec![vec![0; slots]; levels],
            hops: vec![0; levels],
            compute_ops: 0,
            peak: vec![0; levels],
            peak_per_slot: vec![vec![0; slots]; levels],
        }
    }

    pub fn to_action_counts(&self, layer: &Layer, tensors: usize) -> ActionCounts {
        let levels = self.hops.len();
        let mut c = ActionCounts::zeros(levels, tensors);
        for (s, &(t, _)) in layer.relations().iter().enumerate() {
            for l in 0..levels {
                c.fills[l][t] += self.fills[l][s];
                c.reads[l][t] += self.reads[l][s];
                c.updates[l][t] += self.updates[l][s];
            }
        }
        c.hops.clone_from(&self.hops);
        c.compute_ops = self.compute_ops;
        c
    }
}

/// Action counts of one layer tile under its intra-layer nest.
///
/// Every buffer starts empty at the start of a layer tile. A level keeps a
/// tensor when it sits below the tensor's retention level. Loops at levels
/// above `L` pick the tile held at `L`; spatial ones pick the instance.
pub fn per_tile_counts(w: &FusionSet, bm: &BoundMapping, layer: LayerId, ops: &Region) -> Result<IntraCounts, AnalysisError> {
    let l = w.layer(layer);
    let k = bm.innermost;
    let levels = k + 1;
    let slots = l.relations().len();
    let mut c = IntraCounts::zeros(levels, slots);
    let Some(bbox) = ops.bounds() else {
        return Ok(c);
    };
    c.compute_ops = ops.count();
    let nest = &bm.nests[layer];
    let ret: Vec<usize> = l.relations().iter().map(|&(t, _)| bm.retention_level[t]).collect();
    let is_output: Vec<bool> = l.relations().iter().map(|&(t, _)| t == l.output).collect();

    for lv in 1..=k {
        buffer_level(l, nest, ops, &bbox, lv, &ret, &is_output, &mut c)?;
    }
    let mut ctx = ComputeCtx::new(l, nest, k);
    let mut ranges = bbox.clone();
    let agg = ctx.rec(0, &mut ranges, ops)?;
    for s in 0..slots {
        if is_output[s] {
            c.updates[k][s] += agg.words[s];
        } else {
            c.reads[k][s] += agg.words[s];
        }
    }
    c.hops[k] += agg.hops;
    Ok(c)
}

type GroupKey = (Vec<i64>, Option<Vec<i64>>, usize);

#[allow(clippy::too_many_arguments)]
fn buffer_level(
    l: &Layer,
    nest: &[BoundLoop],
    ops: &Region,
    bbox: &[(i64, i64)],
    lv: usize,
    ret: &[usize],
    is_output: &[bool],
    c: &mut IntraCounts,
) -> Result<(), AnalysisError> {
    let kept: Vec<usize> = (0..ret.len()).filter(|&s| ret[s] < lv).collect();
    if kept.is_empty() {
        return Ok(());
    }
    let above: Vec<&BoundLoop> = nest.iter().filter(|b| b.level < lv).collect();
    let loops: Vec<(usize, i64)> = above.iter().map(|b| (b.dim, b.tile)).collect();
    let chunks = nested_chunks(bbox, &loops);

    let mut prev: HashMap<Vec<i64>, Vec<Option<Region>>> = HashMap::new();
    let mut order: Vec<Vec<i64>> = Vec::new();
    let mut place: HashMap<Vec<i64>, (Vec<i64>, i64)> = HashMap::new();
    let mut groups: HashMap<GroupKey, Vec<(i64, Region)>> = HashMap::new();

    for chunk in &chunks {
        let b = IntBox::new(chunk.ranges.iter().map(|&(lo, hi)| StridedInterval::range(lo, hi)));
        let sub = ops.intersect_box(&b);
        if sub.is_empty() {
            continue;
        }
        let mut inst = Vec::new();
        let mut step = Vec::new();
        let mut pinst = Vec::new();
        let mut lin = 0i64;
        for (bl, &x) in above.iter().zip(&chunk.index) {
            match bl.kind {
                LoopKind::Temporal => step.push(x),
                LoopKind::Spatial => {
                    inst.push(x);
                    if bl.level + 1 == lv {
                        lin = lin * bl.radix + x;
                    } else {
                        pinst.push(x);
                    }
                }
            }
        }
        let state = prev.entry(inst.clone()).or_insert_with(|| {
            order.push(inst.clone());
            vec![None; ret.len()]
        });
        place.entry(inst.clone()).or_insert((pinst.clone(), lin));
        let mut total = 0;
        for &s in &kept {
            let tile = l.relations()[s].1.image(&sub)?;
            let n = tile.count();
            total += n;
            c.peak_per_slot[lv][s] = c.peak_per_slot[lv][s].max(n);
            if is_output[s] {
                if let Some(p) = &state[s] {
                    let drain = p.difference(&tile)?;
                    if !drain.is_empty() {
                        c.reads[lv][s] += drain.count();
                        groups.entry((pinst.clone(), Some(step.clone()), s)).or_default().push((lin, drain));
                    }
                }
            } else {
                let fill = match &state[s] {
                    Some(p) => tile.difference(p)?,
                    None => tile.clone(),
                };
                if !fill.is_empty() {
                    c.fills[lv][s] += fill.count();
                    groups.entry((pinst.clone(), Some(step.clone()), s)).or_default().push((lin, fill));
                }
            }
            state[s] = Some(tile);
        }
        c.peak[lv] = c.peak[lv].max(total);
    }
    for inst in &order {
        let (pinst, lin) = place[inst].clone();
        for &s in &kept {
            if !is_output[s] {
                continue;
            }
            if let Some(p) = prev[inst][s].clone() {
                c.reads[lv][s] += p.count();
                groups.entry((pinst.clone(), None, s)).or_default().push((lin, p));
            }
        }
    }
    for ((_, _, s), mut children) in groups {
        children.sort_by(|a, b| b.0.cmp(&a.0));
        let (words, hops) = deliver(&children)?;
        if is_output[s] {
            c.updates[lv - 1][s] += words;
        } else {
            c.reads[lv - 1][s] += words;
        }
        c.hops[lv - 1] += hops;
    }
    Ok(())
}

/// Distinct words and hop cost of moving each child's set; children are
/// sorted by descending linear index.
fn deliver(children: &[(i64, Region)]) -> Result<(u64, u64), AnalysisError> {
    let mut covered = Region::empty(children[0].1.space().clone());
    let mut hops = 0u64;
    for (lin, r) in children {
        let fresh = r.difference(&covered)?;
        hops += fresh.count() * (*lin as u64 + 1);
        covered = covered.union(&fresh)?;
    }
    Ok((covered.count(), hops))
}

#[derive(Clone, Default)]
struct ComputeAgg {
    words: Vec<u64>,
    hops: u64,
}

impl ComputeAgg {
    fn add(&mut self, o: &ComputeAgg) {
        for (a, b) in self.words.iter_mut().zip(&o.words) {
            *a += b;
        }
        self.hops += o.hops;
    }
}

/// Operand delivery from the innermost buffer to compute, memoized on the
/// shape of the remaining work.
struct ComputeCtx<'a> {
    layer: &'a Layer,
    nest: &'a [BoundLoop],
    /// `(dim, multiplier)` of spatial loops at the innermost level.
    spatial: Vec<(usize, i64)>,
    is_spatial: Vec<bool>,
    memo: HashMap<(usize, Vec<i64>, Region), Arc<ComputeAgg>>,
}

impl<'a> ComputeCtx<'a> {
    fn new(layer: &'a Layer, nest: &'a [BoundLoop], k: usize) -> Self {
        let is_spatial: Vec<bool> = nest.iter().map(|b| b.kind == LoopKind::Spatial && b.level == k).collect();
        let sp: Vec<&BoundLoop> = nest.iter().zip(&is_spatial).filter(|(_, &s)| s).map(|(b, _)| b).collect();
        let mut spatial = Vec::with_capacity(sp.len());
        let mut mult = 1;
        for b in sp.iter().rev() {
            spatial.push((b.dim, mult));
            mult *= b.radix;
        }
        spatial.reverse();
        ComputeCtx { layer, nest, spatial, is_spatial, memo: HashMap::new() }
    }

    fn rec(&mut self, mut j: usize, ranges: &mut Vec<(i64, i64)>, o: &Region) -> Result<ComputeAgg, AnalysisError> {
        let slots = self.layer.relations().len();
        if o.is_empty() {
            return Ok(ComputeAgg { words: vec![0; slots], hops: 0 });
        }
        while j < self.nest.len() && self.is_spatial[j] {
            j += 1;
        }
        let lo: Vec<i64> = ranges.iter().map(|r| -r.0).collect();
        let key = (j, ranges.iter().map(|r| r.1 - r.0).collect::<Vec<_>>(), o.translate(&lo));
        if let Some(hit) = self.memo.get(&key) {
            return Ok((**hit).clone());
        }
        let agg = if j == self.nest.len() {
            self.leaf(ranges, o)?
        } else {
            let BoundLoop { dim, tile, .. } = self.nest[j];
            let (a, b) = ranges[dim];
            let mut acc = ComputeAgg { words: vec![0; slots], hops: 0 };
            let mut s = a;
            while s <= b {
                ranges[dim] = (s, (s + tile - 1).min(b));
                let bx = IntBox::new(ranges.iter().map(|&(x, y)| StridedInterval::range(x, y)));
                let sub = o.intersect_box(&bx);
                let child = self.rec(j + 1, ranges, &sub)?;
                acc.add(&child);
                s += tile;
            }
            ranges[dim] = (a, b);
            acc
        };
        self.memo.insert(key, Arc::new(agg.clone()));
        Ok(agg)
    }

    /// One compute step across the spatial units of the innermost level.
    fn leaf(&self, ranges: &[(i64, i64)], o: &Region) -> Result<ComputeAgg, AnalysisError> {
        let pts = o.enumerate_points(u64::MAX)?;
        let mut words = Vec::with_capacity(self.layer.relations().len());
        let mut hops = 0;
        for (_, rel) in self.layer.relations() {
            let mut best: HashMap<Vec<i64>, i64> = HashMap::new();
            for p in &pts {
                let lin: i64 = self.spatial.iter().map(|&(d, m)| (p[d] - ranges[d].0) * m).sum();
                let e = best.entry(rel.apply(p)).or_insert(lin);
                *e = (*e).max(lin);
            }
            words.push(best.len() as u64);
            hops += best.values().map(|&l| l as u64 + 1).sum::<u64>();
        }
        Ok(ComputeAgg { words, hops })
    }
}

/// Memoizes `per_tile_counts` per layer and normalized ops region.
#[derive(Default)]
pub struct IntraCache {
    map: HashMap<(LayerId, Region), Arc<IntraCounts>>,
}

impl IntraCache {
    pub fn get(&mut self, w: &FusionSet, bm: &BoundMapping, layer: LayerId, ops: &Region) -> Result<Arc<IntraCounts>, AnalysisError> {
        let key = (layer, ops.normalized());
        if let Some(hit) = self.map.get(&key) {
            return Ok(hit.clone());
        }
        let c = Arc::new(per_tile_counts(w, bm, layer, &key.1)?);
        self.map.insert(key, c.clone());
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
