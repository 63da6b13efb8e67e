//! Brute-force reference simulator.
//!
//! Walks every operation of every iteration, keeps buffer contents as hash
//! sets and tallies each action. Only the workload and mapping IR are shared
//! with the analytical path; grouping, tiling and set arithmetic are redone
//! here point by point.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::analysis::ActionCounts;
use crate::arch::Architecture;
use crate::mapping::{BoundLoop, BoundMapping, LoopKind, Parallelism, Violation};
use crate::metrics::{Evaluation, Occupancy};
use crate::workload::{FusionSet, Layer, TensorRole};

type Point = Vec<i64>;
type Set = HashSet<Point>;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("simulation needs more than {limit} executed ops")]
    OpLimit { limit: u64 },
    #[error("invalid mapping: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TraceRow {
    pub step: usize,
    pub level: String,
    /// Tensor name, or `total` for the level sum.
    pub tensor: String,
    pub occupancy: u64,
}

#[derive(Clone, Debug)]
pub struct OracleResult {
    pub counts: ActionCounts,
    pub executed_ops: Vec<u64>,
    pub recompute_ops: Vec<u64>,
    pub occupancy: Occupancy,
    pub offchip_words: u64,
    /// `[layer][iteration]`
    pub tile_latency: Vec<Vec<u64>>,
    pub compute_latency: u64,
    pub trace: Vec<TraceRow>,
}

impl OracleResult {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("step,level,tensor,occupancy\n");
        for r in &self.trace {
            s.push_str(&format!("{},{},{},{}\n", r.step, r.level, r.tensor, r.occupancy));
        }
        s
    }
}

/// Offsets inside nested chunks: each loop takes `offset / tile` and keeps
/// `offset % tile` for the next loop on the same dim.
fn chunk_index(x: &[i64], lo: &[i64], loops: &[(usize, i64)]) -> Vec<i64> {
    let mut off: Vec<i64> = x.iter().zip(lo).map(|(a, b)| a - b).collect();
    loops
        .iter()
        .map(|&(d, t)| {
            let i = off[d] / t;
            off[d] %= t;
            i
        })
        .collect()
}

fn all_points(shape: &[i64]) -> Vec<Point> {
    let mut out = vec![Vec::new()];
    for &s in shape {
        out = out.into_iter().flat_map(|p| (0..s).map(move |x| {
            let mut q = p.clone();
            q.push(x);
            q
        })).collect();
    }
    out
}

fn apply(layer: &Layer, slot: usize, x: &[i64]) -> Point {
    layer.relations()[slot].1.exprs().iter().map(|e| e.eval(x)).collect()
}

fn slot_of(layer: &Layer, t: usize) -> usize {
    layer.relations().iter().position(|&(id, _)| id == t).expect("tensor of layer")
}

struct IntraTally {
    counts: ActionCounts,
    peak: Vec<u64>,
    /// `[level][tensor]`
    peak_t: Vec<Vec<u64>>,
}

pub fn simulate(w: &FusionSet, bm: &BoundMapping, a: &Architecture, op_limit: u64) -> Result<OracleResult, OracleError> {
    let nl = w.layers().len();
    let nt = w.tensors().len();
    let levels = a.levels.len();
    let last = w.last_layer();

    // Group the last layer's ops by partition coordinates.
    let zero = vec![0; last.shape.len()];
    let mut groups: BTreeMap<Point, Vec<Point>> = BTreeMap::new();
    for x in all_points(&last.shape) {
        groups.entry(chunk_index(&x, &zero, &bm.partitions)).or_default().push(x);
    }
    let coords: Vec<Point> = groups.keys().cloned().collect();
    let n = coords.len();

    let mut counts = ActionCounts::zeros(levels, nt);
    let mut retained: Vec<Set> = vec![Set::new(); nt];
    let mut executed = vec![0u64; nl];
    let mut distinct: Vec<Set> = vec![Set::new(); nl];
    let mut budget = 0u64;
    let mut retained_hist: Vec<Vec<Set>> = Vec::with_capacity(n);
    let mut intra_hist: Vec<Vec<Option<(Vec<u64>, Vec<Vec<u64>>)>>> = Vec::with_capacity(n);
    let mut ops_hist: Vec<Vec<u64>> = Vec::with_capacity(n);

    for (i, coord) in coords.iter().enumerate() {
        if i > 0 {
            for t in 0..nt {
                if !bm.same_group(t, &coords[i - 1], coord) {
                    retained[t].clear();
                }
            }
        }
        let mut ops: Vec<Set> = vec![Set::new(); nl];
        ops[nl - 1] = groups[coord].iter().cloned().collect();
        for l in (0..nl - 1).rev() {
            let layer = w.layer(l);
            let t = layer.output;
            let mut needed = Set::new();
            for &c in &w.tensor(t).consumers {
                let s = slot_of(w.layer(c), t);
                for x in &ops[c] {
                    needed.insert(apply(w.layer(c), s, x));
                }
            }
            let reductions: Vec<usize> = (0..layer.shape.len()).filter(|d| !layer.output_dims.contains(d)).collect();
            let red_shape: Vec<i64> = reductions.iter().map(|&d| layer.shape[d]).collect();
            let red_points = all_points(&red_shape);
            for y in needed.iter().filter(|y| !retained[t].contains(*y)) {
                for r in &red_points {
                    let mut x = vec![0; layer.shape.len()];
                    for (k, &d) in layer.output_dims.iter().enumerate() {
                        x[d] = y[k];
                    }
                    for (k, &d) in reductions.iter().enumerate() {
                        x[d] = r[k];
                    }
                    ops[l].insert(x);
                }
            }
            if bm.retention_level[t] >= 1 {
                retained[t].extend(needed);
            }
        }
        for l in 0..nl {
            budget += ops[l].len() as u64;
            executed[l] += ops[l].len() as u64;
            distinct[l].extend(ops[l].iter().cloned());
        }
        if budget > op_limit {
            return Err(OracleError::OpLimit { limit: op_limit });
        }

        // Backed tensors: fetch what the retained set lacks.
        for (t, info) in w.tensors().iter().enumerate() {
            if info.role == TensorRole::Intermediate {
                continue;
            }
            let mut touched = Set::new();
            for u in w.users(t) {
                let s = slot_of(w.layer(u), t);
                for x in &ops[u] {
                    touched.insert(apply(w.layer(u), s, x));
                }
            }
            let r = bm.retention_level[t];
            if r == 0 {
                continue;
            }
            if info.role != TensorRole::ExternalOutput {
                let fresh = touched.iter().filter(|p| !retained[t].contains(*p)).count() as u64;
                counts.fills[r][t] += fresh;
                counts.reads[0][t] += fresh;
                counts.hops[0] += fresh;
            }
            retained[t].extend(touched);
            if info.role == TensorRole::ExternalOutput {
                if i + 1 == n || !bm.same_group(t, &coords[i + 1], coord) {
                    let words = retained[t].len() as u64;
                    counts.reads[r][t] += words;
                    counts.updates[0][t] += words;
                    counts.hops[0] += words;
                }
            }
        }

        let mut row = Vec::with_capacity(nl);
        for l in 0..nl {
            if ops[l].is_empty() {
                row.push(None);
                continue;
            }
            let tally = intra(w, bm, l, &ops[l], levels);
            add(&mut counts, &tally.counts);
            row.push(Some((tally.peak, tally.peak_t)));
        }
        intra_hist.push(row);
        retained_hist.push(retained.clone());
        ops_hist.push(ops.iter().map(|s| s.len() as u64).collect());
    }

    let recompute_ops: Vec<u64> = (0..nl).map(|l| executed[l] - distinct[l].len() as u64).collect();
    let units = match bm.parallelism {
        Parallelism::Sequential => a.compute.units,
        Parallelism::Pipeline => (a.compute.units / nl as u64).max(1),
    };
    let rate = units * a.compute.ops_per_cycle_per_unit;
    let tile_latency: Vec<Vec<u64>> =
        (0..nl).map(|l| ops_hist.iter().map(|o| o[l].div_ceil(rate)).collect()).collect();
    let compute_latency = match bm.parallelism {
        Parallelism::Sequential => tile_latency.iter().flatten().sum(),
        Parallelism::Pipeline => {
            let mut finish = vec![vec![0u64; n]; nl];
            for i in 0..n {
                for l in 0..nl {
                    let after_prev = if i > 0 { finish[l][i - 1] } else { 0 };
                    let after_producer = if l > 0 { finish[l - 1][i] } else { 0 };
                    finish[l][i] = after_prev.max(after_producer) + tile_latency[l][i];
                }
            }
            if n == 0 { 0 } else { finish[nl - 1][n - 1] }
        }
    };

    let (occupancy, trace) = occupancy_trace(w, bm, a, &retained_hist, &intra_hist);
    let offchip_words = counts.fills[0].iter().chain(&counts.reads[0]).chain(&counts.updates[0]).sum();
    Ok(OracleResult {
        counts,
        executed_ops: executed,
        recompute_ops,
        occupancy,
        offchip_words,
        tile_latency,
        compute_latency,
        trace,
    })
}

fn add(into: &mut ActionCounts, c: &ActionCounts) {
    for l in 0..into.hops.len() {
        for t in 0..into.fills[l].len() {
            into.fills[l][t] += c.fills[l][t];
            into.reads[l][t] += c.reads[l][t];
            into.updates[l][t] += c.updates[l][t];
        }
        into.hops[l] += c.hops[l];
    }
    into.compute_ops += c.compute_ops;
}

/// Words per group delivered once each, hop cost from the farthest child.
fn deliver(children: &[(i64, Set)]) -> (u64, u64) {
    let mut far: HashMap<&Point, i64> = HashMap::new();
    for (lin, s) in children {
        for p in s {
            let e = far.entry(p).or_insert(*lin);
            *e = (*e).max(*lin);
        }
    }
    (far.len() as u64, far.values().map(|&l| l as u64 + 1).sum())
}

fn intra(w: &FusionSet, bm: &BoundMapping, l: usize, ops: &Set, levels: usize) -> IntraTally {
    let layer = w.layer(l);
    let nt = w.tensors().len();
    let k = bm.innermost;
    let nest: &[BoundLoop] = &bm.nests[l];
    let mut lo = vec![i64::MAX; layer.shape.len()];
    for x in ops {
        for (a, &b) in lo.iter_mut().zip(x) {
            *a = (*a).min(b);
        }
    }
    let loops: Vec<(usize, i64)> = nest.iter().map(|b| (b.dim, b.tile)).collect();
    let mut pts: Vec<(Point, Point)> = ops.iter().map(|x| (chunk_index(x, &lo, &loops), x.clone())).collect();
    pts.sort();

    let mut counts = ActionCounts::zeros(levels, nt);
    counts.compute_ops = ops.len() as u64;
    let mut peak = vec![0; levels];
    let mut peak_t = vec![vec![0; nt]; levels];
    let slots = layer.relations().len();
    let is_out = |s: usize| layer.relations()[s].0 == layer.output;

    for lv in 1..=k {
        let kept: Vec<usize> = (0..slots).filter(|&s| bm.retention_level[layer.relations()[s].0] < lv).collect();
        if kept.is_empty() {
            continue;
        }
        // inst -> step -> per-slot words
        let mut tiles: BTreeMap<Point, BTreeMap<Point, Vec<Set>>> = BTreeMap::new();
        let mut where_: HashMap<Point, (Point, i64)> = HashMap::new();
        for (idx, x) in &pts {
            let mut inst = Vec::new();
            let mut step = Vec::new();
            let mut parent = Vec::new();
            let mut lin = 0;
            for (j, b) in nest.iter().enumerate() {
                if b.level >= lv {
                    continue;
                }
                if b.kind == LoopKind::Temporal {
                    step.push(idx[j]);
                } else {
                    inst.push(idx[j]);
                    if b.level == lv - 1 {
                        lin = lin * b.radix + idx[j];
                    } else {
                        parent.push(idx[j]);
                    }
                }
            }
            where_.insert(inst.clone(), (parent, lin));
            let entry = tiles.entry(inst).or_default().entry(step).or_insert_with(|| vec![Set::new(); slots]);
            for &s in &kept {
                entry[s].insert(apply(layer, s, x));
            }
        }
        let mut groups: HashMap<(Point, Option<Point>, usize), Vec<(i64, Set)>> = HashMap::new();
        for (inst, steps) in &tiles {
            let (parent, lin) = where_[inst].clone();
            let mut prev: Option<&Vec<Set>> = None;
            for (step, cur) in steps {
                let total: u64 = kept.iter().map(|&s| cur[s].len() as u64).sum();
                peak[lv] = peak[lv].max(total);
                for &s in &kept {
                    let t = layer.relations()[s].0;
                    peak_t[lv][t] = peak_t[lv][t].max(cur[s].len() as u64);
                    let moved: Set = if is_out(s) {
                        match prev {
                            Some(p) => p[s].difference(&cur[s]).cloned().collect(),
                            None => Set::new(),
                        }
                    } else {
                        match prev {
                            Some(p) => cur[s].difference(&p[s]).cloned().collect(),
                            None => cur[s].clone(),
                        }
                    };
                    if moved.is_empty() {
                        continue;
                    }
                    if is_out(s) {
                        counts.reads[lv][t] += moved.len() as u64;
                    } else {
                        counts.fills[lv][t] += moved.len() as u64;
                    }
                    groups.entry((parent.clone(), Some(step.clone()), s)).or_default().push((lin, moved));
                }
                prev = Some(cur);
            }
            if let Some(p) = prev {
                for &s in kept.iter().filter(|&&s| is_out(s)) {
                    let t = layer.relations()[s].0;
                    counts.reads[lv][t] += p[s].len() as u64;
                    groups.entry((parent.clone(), None, s)).or_default().push((lin, p[s].clone()));
                }
            }
        }
        for ((_, _, s), children) in groups {
            let t = layer.relations()[s].0;
            let (words, hops) = deliver(&children);
            if is_out(s) {
                counts.updates[lv - 1][t] += words;
            } else {
                counts.reads[lv - 1][t] += words;
            }
            counts.hops[lv - 1] += hops;
        }
    }

    // Compute: one op per unit per step.
    let mut steps: HashMap<(Point, Point), Vec<(i64, &Point)>> = HashMap::new();
    for (idx, x) in &pts {
        let mut outer = Vec::new();
        let mut temporal = Vec::new();
        let mut lin = 0;
        for (j, b) in nest.iter().enumerate() {
            match (b.kind, b.level == k) {
                (LoopKind::Temporal, _) => temporal.push(idx[j]),
                (LoopKind::Spatial, true) => lin = lin * b.radix + idx[j],
                (LoopKind::Spatial, false) => outer.push(idx[j]),
            }
        }
        steps.entry((outer, temporal)).or_default().push((lin, x));
    }
    for units in steps.values() {
        for s in 0..slots {
            let t = layer.relations()[s].0;
            let children: Vec<(i64, Set)> =
                units.iter().map(|(lin, x)| (*lin, Set::from([apply(layer, s, x)]))).collect();
            let (words, hops) = deliver(&children);
            if is_out(s) {
                counts.updates[k][t] += words;
            } else {
                counts.reads[k][t] += words;
            }
            counts.hops[k] += hops;
        }
    }
    IntraTally { counts, peak, peak_t }
}

#[allow(clippy::type_complexity)]
fn occupancy_trace(
    w: &FusionSet,
    bm: &BoundMapping,
    a: &Architecture,
    retained: &[Vec<Set>],
    intra: &[Vec<Option<(Vec<u64>, Vec<Vec<u64>>)>>],
) -> (Occupancy, Vec<TraceRow>) {
    let levels = a.levels.len();
    let nt = w.tensors().len();
    let nl = w.layers().len();
    let n = retained.len();
    let mut occ = Occupancy { peak: vec![0; levels], per_tensor: vec![vec![0; nt]; levels] };
    let mut trace = Vec::new();
    let pipeline = bm.parallelism == Parallelism::Pipeline;
    let steps = if pipeline { n + nl - 1 } else { n };
    for s in 0..steps {
        // (layer, iteration) pairs live at this step
        let live: Vec<(usize, usize)> = if pipeline {
            (0..nl).filter(|&e| s >= e && s - e < n).map(|e| (e, s - e)).collect()
        } else {
            (0..nl).map(|e| (e, s)).collect()
        };
        for lv in 1..levels {
            let mut total = 0;
            let mut tile_best = 0;
            let mut per = vec![0u64; nt];
            for &(e, i) in &live {
                if let Some((peak, peak_t)) = &intra[i][e] {
                    if pipeline {
                        total += peak[lv];
                    } else {
                        tile_best = tile_best.max(peak[lv]);
                    }
                    for t in 0..nt {
                        if bm.retention_level[t] < lv {
                            per[t] = if pipeline { per[t] + peak_t[lv][t] } else { per[t].max(peak_t[lv][t]) };
                        }
                    }
                }
            }
            total += tile_best;
            for t in 0..nt {
                if bm.retention_level[t] != lv {
                    continue;
                }
                let words = if pipeline {
                    let mut u: HashSet<&Point> = HashSet::new();
                    for &(e, i) in &live {
                        if w.users(t).any(|x| x == e) {
                            u.extend(retained[i][t].iter());
                        }
                    }
                    u.len() as u64
                } else {
                    retained[s][t].len() as u64
                };
                per[t] = words;
                total += words;
            }
            for t in 0..nt {
                occ.per_tensor[lv][t] = occ.per_tensor[lv][t].max(per[t]);
                if per[t] > 0 {
                    trace.push(TraceRow {
                        step: s,
                        level: a.levels[lv].name.clone(),
                        tensor: w.tensor(t).name.clone(),
                        occupancy: per[t],
                    });
                }
            }
            occ.peak[lv] = occ.peak[lv].max(total);
            trace.push(TraceRow { step: s, level: a.levels[lv].name.clone(), tensor: "total".into(), occupancy: total });
        }
    }
    (occ, trace)
}

/// First counter where the two paths disagree.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Mismatch {
    pub counter: String,
    pub analytic: u64,
    pub oracle: u64,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: analytic {} vs oracle {}", self.counter, self.analytic, self.oracle)
    }
}

/// Checks every counter; `Ok` only on exact agreement.
pub fn compare(w: &FusionSet, a: &Architecture, ev: &Evaluation, or: &OracleResult) -> Result<(), Mismatch> {
    let mut pairs: Vec<(String, u64, u64)> = vec![("compute_ops".into(), ev.counts.compute_ops, or.counts.compute_ops)];
    for (lv, level) in a.levels.iter().enumerate() {
        for (t, info) in w.tensors().iter().enumerate() {
            let key = |kind: &str| format!("{kind}[{}][{}]", level.name, info.name);
            pairs.push((key("fills"), ev.counts.fills[lv][t], or.counts.fills[lv][t]));
            pairs.push((key("reads"), ev.counts.reads[lv][t], or.counts.reads[lv][t]));
            pairs.push((key("updates"), ev.counts.updates[lv][t], or.counts.updates[lv][t]));
        }
        pairs.push((format!("hops[{}]", level.name), ev.counts.hops[lv], or.counts.hops[lv]));
    }
    for (l, layer) in w.layers().iter().enumerate() {
        pairs.push((format!("executed_ops[{}]", layer.name), ev.executed_ops[l], or.executed_ops[l]));
        pairs.push((
            format!("recompute_ops[{}]", layer.name),
            ev.metrics.recompute_ops[&layer.name],
            or.recompute_ops[l],
        ));
    }
    pairs.push(("offchip_words".into(), ev.metrics.offchip_words, or.offchip_words));
    for (lv, level) in a.levels.iter().enumerate().skip(1) {
        pairs.push((format!("occupancy[{}]", level.name), ev.metrics.occupancy.peak[lv], or.occupancy.peak[lv]));
        for (t, info) in w.tensors().iter().enumerate() {
            pairs.push((
                format!("occupancy[{}][{}]", level.name, info.name),
                ev.metrics.occupancy.per_tensor[lv][t],
                or.occupancy.per_tensor[lv][t],
            ));
        }
    }
    pairs.push(("compute_latency".into(), ev.metrics.compute_latency_cycles, or.compute_latency));
    for (counter, analytic, oracle) in pairs {
        if analytic != oracle {
            return Err(Mismatch { counter, analytic, oracle });
        }
    }
    Ok(())
}
