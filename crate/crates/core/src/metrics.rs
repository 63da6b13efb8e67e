//! Latency, energy, occupancy and off-chip traffic from action counts.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::analysis::{self, ActionCounts, AnalysisError, IntraCache, Iteration};
pub use crate::arch::{ArchError, Architecture, Compute, Level};
use crate::geometry::Region;
use crate::mapping::{bind, BoundMapping, Mapping, Parallelism, Violation};
use crate::workload::FusionSet;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("level {0} has zero bandwidth")]
    ZeroBandwidth(String),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid mapping:\n{}", .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Sum of every tile latency; `l` is indexed `[layer][iteration]`.
pub fn sequential_latency(l: &[Vec<u64>]) -> u64 {
    l.iter().flatten().sum()
}

/// Makespan when tile `i` of layer `k` waits for tile `i` of layer `k - 1`
/// and tile `i - 1` of layer `k`.
pub fn pipeline_latency_dp(l: &[Vec<u64>]) -> u64 {
    let Some(first) = l.first() else { return 0 };
    let mut finish = vec![0u64; l.len()];
    for i in 0..first.len() {
        let mut above = 0;
        for (k, row) in l.iter().enumerate() {
            finish[k] = finish[k].max(above) + row[i];
            above = finish[k];
        }
    }
    finish.last().copied().unwrap_or(0)
}

/// Same makespan over runs of identical iterations: `(count, per-layer cost)`.
/// Cost grows with the number of runs, not iterations.
pub fn pipeline_latency(runs: &[(u64, Vec<u64>)]) -> u64 {
    let Some((_, c0)) = runs.first() else { return 0 };
    let n = c0.len();
    let mut prev = vec![0u64; n];
    for (k, c) in runs {
        if *k == 0 {
            continue;
        }
        let mut next = vec![0u64; n];
        for l in 0..n {
            let mut best = 0;
            let mut sum = 0;
            let mut max = 0;
            for j in (0..=l).rev() {
                sum += c[j];
                max = max.max(c[j]);
                best = best.max(prev[j] + sum + (k - 1) * max);
            }
            next[l] = best;
        }
        prev = next;
    }
    prev.last().copied().unwrap_or(0)
}

/// Sequential latency minus the hidden latency for `t` iterations of
/// uniform per-layer cost `c`: each overlapped iteration hides all stages but
/// the slowest.
pub fn pipeline_closed_form(c: &[u64], t: u64) -> u64 {
    if t == 0 || c.is_empty() {
        return 0;
    }
    let sum: u64 = c.iter().sum();
    let hidden = (t - 1) * (sum - c.iter().max().copied().unwrap_or(0));
    t * sum - hidden
}

/// Run-length encodes per-iteration columns of `[layer][iteration]`.
pub fn latency_runs(l: &[Vec<u64>]) -> Vec<(u64, Vec<u64>)> {
    let mut runs: Vec<(u64, Vec<u64>)> = Vec::new();
    let iters = l.first().map_or(0, Vec::len);
    for i in 0..iters {
        let col: Vec<u64> = l.iter().map(|row| row[i]).collect();
        match runs.last_mut() {
            Some((k, c)) if *c == col => *k += 1,
            _ => runs.push((1, col)),
        }
    }
    runs
}

/// Cycles per level to move its words at its bandwidth.
pub fn memory_latency(counts: &ActionCounts, a: &Architecture) -> Result<Vec<u64>, MetricsError> {
    a.levels
        .iter()
        .enumerate()
        .map(|(i, lv)| {
            let words = counts.level_words(i);
            if lv.bandwidth == 0 {
                if words == 0 {
                    return Ok(0);
                }
                return Err(MetricsError::ZeroBandwidth(lv.name.clone()));
            }
            Ok(words.div_ceil(lv.bandwidth))
        })
        .collect()
}

#[derive(Clone, PartialEq, Debug, Default)]
pub struct Energy {
    pub total: f64,
    /// `<level>.read`, `<level>.write`, `<level>.noc` and `compute`.
    pub breakdown: BTreeMap<String, f64>,
}

pub fn energy(counts: &ActionCounts, a: &Architecture) -> Energy {
    let mut breakdown = BTreeMap::new();
    for (i, lv) in a.levels.iter().enumerate() {
        let reads: u64 = counts.reads[i].iter().sum();
        let writes: u64 = counts.fills[i].iter().chain(&counts.updates[i]).sum();
        breakdown.insert(format!("{}.read", lv.name), reads as f64 * lv.read_energy);
        breakdown.insert(format!("{}.write", lv.name), writes as f64 * lv.write_energy);
        breakdown.insert(format!("{}.noc", lv.name), counts.hops[i] as f64 * lv.hop_energy);
    }
    breakdown.insert("compute".into(), counts.compute_ops as f64 * a.compute.op_energy);
    let total = breakdown.values().sum();
    Energy { total, breakdown }
}

/// Words at the off-chip level.
pub fn offchip_transfers(counts: &ActionCounts) -> u64 {
    counts.level_words(0)
}

/// Peak words per level, with per-tensor maxima; level 0 is left at zero.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct Occupancy {
    pub peak: Vec<u64>,
    /// `[level][tensor]`
    pub per_tensor: Vec<Vec<u64>>,
}

#[derive(Clone, PartialEq, Debug)]
pub struct Metrics {
    pub latency_cycles: u64,
    pub compute_latency_cycles: u64,
    pub sequential_latency_cycles: u64,
    /// Per level, in architecture order.
    pub memory_latency_cycles: Vec<u64>,
    pub energy: Energy,
    pub occupancy: Occupancy,
    pub offchip_words: u64,
    pub recompute_ops: BTreeMap<String, u64>,
    pub feasible: bool,
    /// Human-readable capacity violations.
    pub capacity_violations: Vec<String>,
}

impl Metrics {
    pub fn total_recompute(&self) -> u64 {
        self.recompute_ops.values().sum()
    }

    /// Peak words summed over on-chip levels.
    pub fn onchip_occupancy(&self) -> u64 {
        self.occupancy.peak.iter().skip(1).sum()
    }
}

/// Everything the analytical model derives for one mapping.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub counts: ActionCounts,
    /// Per layer.
    pub executed_ops: Vec<u64>,
    /// `[layer][iteration]`
    pub tile_latency: Vec<Vec<u64>>,
    pub iterations: usize,
    pub tile_classes: usize,
    pub metrics: Metrics,
}

pub fn evaluate(w: &FusionSet, m: &Mapping, a: &Architecture) -> Result<Evaluation, EvalError> {
    let bm = bind(m, w, a).map_err(EvalError::Invalid)?;
    evaluate_bound(w, &bm, a)
}

/// Units each tile may use: all of them sequentially, an equal share per
/// layer in a pipeline.
pub fn units_per_tile(a: &Architecture, parallelism: Parallelism, layers: usize) -> u64 {
    match parallelism {
        Parallelism::Sequential => a.compute.units,
        Parallelism::Pipeline => (a.compute.units / layers as u64).max(1),
    }
}

pub fn evaluate_bound(w: &FusionSet, bm: &BoundMapping, a: &Architecture) -> Result<Evaluation, EvalError> {
    let tiles = analysis::infer_tiles(w, bm)?;
    let recompute = analysis::recompute_ops(w, &tiles)?;
    let classes = analysis::dedupe_tiles(w, &tiles);
    let levels = a.levels.len();
    let nt = w.tensors().len();
    let nl = w.layers().len();
    let mut cache = IntraCache::default();

    let mut counts = ActionCounts::zeros(levels, nt);
    for class in &classes {
        let it = &tiles[class.iterations[0]];
        let mut c = analysis::inter_counts(w, bm, it, levels);
        for lt in &it.layers {
            if lt.ops.is_empty() {
                continue;
            }
            let intra = cache.get(w, bm, lt.layer, &lt.ops)?;
            c.add_scaled(&intra.to_action_counts(w.layer(lt.layer), nt), 1);
        }
        counts.add_scaled(&c, class.multiplicity());
    }

    let rate = units_per_tile(a, bm.parallelism, nl) * a.compute.ops_per_cycle_per_unit;
    let tile_latency: Vec<Vec<u64>> = (0..nl)
        .map(|l| tiles.iter().map(|it| it.layers[l].ops.count().div_ceil(rate)).collect())
        .collect();
    let sequential = sequential_latency(&tile_latency);
    let compute_latency = match bm.parallelism {
        Parallelism::Sequential => sequential,
        Parallelism::Pipeline => pipeline_latency(&latency_runs(&tile_latency)),
    };
    let memory = memory_latency(&counts, a)?;
    let latency = memory.iter().copied().fold(compute_latency, u64::max);
    let occupancy = occupancy(w, bm, a, &tiles, &mut cache)?;
    let (feasible, capacity_violations) = check_capacity(&occupancy, a);
    let executed_ops = (0..nl).map(|l| tiles.iter().map(|it| it.layers[l].ops.count()).sum()).collect();

    let metrics = Metrics {
        latency_cycles: latency,
        compute_latency_cycles: compute_latency,
        sequential_latency_cycles: sequential,
        memory_latency_cycles: memory,
        energy: energy(&counts, a),
        occupancy,
        offchip_words: offchip_transfers(&counts),
        recompute_ops: recompute,
        feasible,
        capacity_violations,
    };
    Ok(Evaluation {
        counts,
        executed_ops,
        tile_latency,
        iterations: tiles.len(),
        tile_classes: classes.len(),
        metrics,
    })
}

pub fn check_capacity(occ: &Occupancy, a: &Architecture) -> (bool, Vec<String>) {
    let mut v = Vec::new();
    for (i, lv) in a.levels.iter().enumerate().skip(1) {
        if let Some(cap) = lv.capacity {
            if occ.peak[i] > cap {
                v.push(format!("{} needs {} words but holds {cap}", lv.name, occ.peak[i]));
            }
        }
    }
    (v.is_empty(), v)
}

/// Peak buffer occupancy over the schedule.
///
/// Retained sets count at their retention level; intra-layer tiles count at
/// every level below it. In a pipeline, layer `e` works on iteration `s - e`
/// at step `s` and all active layers' tiles are live together.
pub fn occupancy(
    w: &FusionSet,
    bm: &BoundMapping,
    a: &Architecture,
    tiles: &[Iteration],
    cache: &mut IntraCache,
) -> Result<Occupancy, EvalError> {
    let levels = a.levels.len();
    let nt = w.tensors().len();
    let nl = w.layers().len();
    let mut occ = Occupancy { peak: vec![0; levels], per_tensor: vec![vec![0; nt]; levels] };
    let n = tiles.len();

    // Intra peaks per [iteration][layer]: (per-level peak, per-level per-tensor).
    let mut intra: Vec<Vec<Option<(Vec<u64>, Vec<Vec<u64>>)>>> = Vec::with_capacity(n);
    for it in tiles {
        let mut row = Vec::with_capacity(nl);
        for lt in &it.layers {
            if lt.ops.is_empty() {
                row.push(None);
                continue;
            }
            let c = cache.get(w, bm, lt.layer, &lt.ops)?;
            let mut per_t = vec![vec![0; nt]; levels];
            for (s, &(t, _)) in w.layer(lt.layer).relations().iter().enumerate() {
                for lv in 0..levels {
                    per_t[lv][t] = per_t[lv][t].max(c.peak_per_slot[lv][s]);
                }
            }
            row.push(Some((c.peak.clone(), per_t)));
        }
        intra.push(row);
    }

    let steps = match bm.parallelism {
        Parallelism::Sequential => n,
        Parallelism::Pipeline => n + nl - 1,
    };
    for s in 0..steps {
        let active: Vec<(usize, usize)> = match bm.parallelism {
            Parallelism::Sequential => (0..nl).map(|e| (e, s)).collect(),
            Parallelism::Pipeline => (0..nl).filter(|&e| s >= e && s - e < n).map(|e| (e, s - e)).collect(),
        };
        for lv in 1..levels {
            let mut retained_total = 0;
            for t in 0..nt {
                if bm.retention_level[t] != lv {
                    continue;
                }
                let words = match bm.parallelism {
                    Parallelism::Sequential => tiles[s].retained[t].count(),
                    Parallelism::Pipeline => {
                        let mut u = Region::empty(w.tensor(t).space.clone());
                        for u_layer in w.users(t) {
                            if let Some(&(_, i)) = active.iter().find(|(e, _)| *e == u_layer) {
                                u = u.union(&tiles[i].retained[t]).map_err(AnalysisError::from)?;
                            }
                        }
                        u.count()
                    }
                };
                retained_total += words;
                occ.per_tensor[lv][t] = occ.per_tensor[lv][t].max(words);
            }
            let mut tile_part = 0;
            let mut tile_per_t = vec![0u64; nt];
            for &(e, i) in &active {
                if let Some((peak, per_t)) = &intra[i][e] {
                    match bm.parallelism {
                        Parallelism::Sequential => {
                            tile_part = tile_part.max(peak[lv]);
                            for t in 0..nt {
                                tile_per_t[t] = tile_per_t[t].max(per_t[lv][t]);
                            }
                        }
                        Parallelism::Pipeline => {
                            tile_part += peak[lv];
                            for t in 0..nt {
                                tile_per_t[t] += per_t[lv][t];
                            }
                        }
                    }
                }
            }
            for t in 0..nt {
                if bm.retention_level[t] < lv {
                    occ.per_tensor[lv][t] = occ.per_tensor[lv][t].max(tile_per_t[t]);
                }
            }
            occ.peak[lv] = occ.peak[lv].max(retained_total + tile_part);
        }
    }
    Ok(occ)
}
