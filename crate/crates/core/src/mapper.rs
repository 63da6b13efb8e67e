//! Bounded mapspace enumeration, Pareto filtering and the case-study datasets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::Architecture;
use crate::mapping::{last_layer_dependencies, validate_mapping, Depth, InterLayerMapping, IntraLayerLoop, Mapping, Parallelism, Partition, RetentionChoice};
use crate::metrics::{evaluate, EvalError};
use crate::templates::{conv_chain, fc_chain, LayerKind};
use crate::workload::{FusionSet, WorkloadError};

#[derive(Debug, Error)]
pub enum MapperError {
    #[error("mapspace syntax error: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("mapspace: {0}")]
    Spec(String),
    #[error("unknown study {0:?}")]
    UnknownStudy(String),
    #[error("invalid shapes: {0}")]
    Shapes(#[from] WorkloadError),
    #[error("evaluation failed for {mapping}: {source}")]
    Eval { mapping: String, source: EvalError },
    #[error("empty mapspace")]
    EmptyMapspace,
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetentionMode {
    #[default]
    PerTensor,
    /// One shared level and depth for every tensor.
    Uniform,
}

#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TileLadder {
    /// Divisors of the rank shape, the shape included.
    #[default]
    Divisors,
    /// Powers of two below the shape, plus the shape.
    Pow2,
    List {
        values: Vec<i64>,
    },
}

impl TileLadder {
    pub fn sizes(&self, shape: i64) -> Vec<i64> {
        match self {
            TileLadder::Divisors => (1..=shape).filter(|d| shape % d == 0).collect(),
            TileLadder::Pow2 => {
                let mut v: Vec<i64> = std::iter::successors(Some(1i64), |x| Some(x * 2)).take_while(|&x| x < shape).collect();
                v.push(shape);
                v
            }
            TileLadder::List { values } => {
                let set: BTreeSet<i64> = values.iter().copied().filter(|&v| v >= 1 && v <= shape).collect();
                set.into_iter().collect()
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Occupancy,
    Offchip,
    Recompute,
    Latency,
    Energy,
}

fn default_parallelism() -> Vec<Parallelism> {
    vec![Parallelism::Sequential]
}

fn default_objectives() -> Vec<Objective> {
    vec![Objective::Occupancy, Objective::Offchip]
}

/// A finite mapspace. An empty `schedules` list means the untiled schedule
/// only.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct MapspaceSpec {
    /// Ordered partition ranks of the last einsum, outermost first.
    #[serde(default)]
    pub schedules: Vec<Vec<String>>,
    #[serde(default)]
    pub tile_sizes: TileLadder,
    #[serde(default)]
    pub retention: RetentionMode,
    /// Candidate retention levels; defaults to the first on-chip level.
    #[serde(default)]
    pub retention_levels: Vec<String>,
    /// Candidate depths; defaults to every depth of the schedule.
    #[serde(default)]
    pub depths: Option<Vec<usize>>,
    #[serde(default = "default_parallelism")]
    pub parallelism: Vec<Parallelism>,
    #[serde(default = "default_objectives")]
    pub objectives: Vec<Objective>,
    /// Intra-layer nests applied to every mapping.
    #[serde(default)]
    pub intra: BTreeMap<String, Vec<IntraLayerLoop>>,
    /// Overrides the capacity of every on-chip level.
    #[serde(default)]
    pub capacity: Option<u64>,
}

impl Default for MapspaceSpec {
    fn default() -> Self {
        MapspaceSpec {
            schedules: Vec::new(),
            tile_sizes: TileLadder::default(),
            retention: RetentionMode::default(),
            retention_levels: Vec::new(),
            depths: None,
            parallelism: default_parallelism(),
            objectives: default_objectives(),
            intra: BTreeMap::new(),
            capacity: None,
        }
    }
}

impl MapspaceSpec {
    pub fn parse(text: &str) -> Result<Self, MapperError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("mapspace serializes")
    }
}

/// Every valid mapping of the spec, in a fixed order: schedule, tile sizes,
/// parallelism, then retention choices with tensors in id order.
///
/// Depths that differ only in loops a tensor's tiles ignore give identical
/// results; only the shallowest of each such class is emitted.
pub fn enumerate_mapspace(spec: &MapspaceSpec, w: &FusionSet, a: &Architecture) -> Result<Vec<Mapping>, MapperError> {
    let last = w.last_layer();
    let levels: Vec<String> = if spec.retention_levels.is_empty() {
        vec![a.levels[1.min(a.levels.len() - 1)].name.clone()]
    } else {
        for l in &spec.retention_levels {
            if a.level_index(l).is_none() {
                return Err(MapperError::Spec(format!("unknown retention level {l}")));
            }
        }
        spec.retention_levels.clone()
    };
    let schedules = if spec.schedules.is_empty() { vec![Vec::new()] } else { spec.schedules.clone() };
    let deps = last_layer_dependencies(w);
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for sched in &schedules {
        let mut dims = Vec::with_capacity(sched.len());
        for r in sched {
            let d = last
                .rank_dim(&r.as_str().into())
                .ok_or_else(|| MapperError::Spec(format!("{r} is not a rank of {}", last.name)))?;
            dims.push(d);
        }
        let n = sched.len();
        let depths: Vec<usize> = match &spec.depths {
            Some(ds) => ds.iter().copied().filter(|&d| d <= n).collect(),
            None => (0..=n).collect(),
        };
        // Shallowest equivalent depth per tensor.
        let canon = |t: usize, d: usize| (0..d).rev().find(|&j| deps[t].contains(&dims[j])).map_or(0, |j| j + 1);
        let per_tensor: Vec<Vec<usize>> = (0..w.tensors().len())
            .map(|t| depths.iter().map(|&d| canon(t, d)).collect::<BTreeSet<_>>().into_iter().collect())
            .collect();
        let retention_sets: Vec<Vec<(usize, usize)>> = match spec.retention {
            RetentionMode::Uniform => {
                let mut v = Vec::new();
                for lv in 0..levels.len() {
                    for &d in &depths {
                        let choice: Vec<(usize, usize)> = (0..w.tensors().len()).map(|t| (lv, canon(t, d))).collect();
                        if !v.contains(&choice) {
                            v.push(choice);
                        }
                    }
                }
                v
            }
            RetentionMode::PerTensor => {
                let options: Vec<Vec<(usize, usize)>> = per_tensor
                    .iter()
                    .map(|ds| (0..levels.len()).flat_map(|lv| ds.iter().map(move |&d| (lv, d))).collect())
                    .collect();
                cartesian(&options)
            }
        };
        let ladders: Vec<Vec<i64>> = dims.iter().map(|&d| spec.tile_sizes.sizes(last.shape[d])).collect();
        for tiles in cartesian(&ladders) {
            for &par in &spec.parallelism {
                for choice in &retention_sets {
                    let m = Mapping {
                        inter: InterLayerMapping {
                            partitions: sched
                                .iter()
                                .zip(&tiles)
                                .map(|(r, &t)| Partition { rank: r.as_str().into(), tile_size: t })
                                .collect(),
                            parallelism: par,
                        },
                        retention: w
                            .tensors()
                            .iter()
                            .zip(choice)
                            .map(|(t, &(lv, d))| RetentionChoice { tensor: t.name.clone(), depth: Depth::Tiles(d), level: levels[lv].clone() })
                            .collect(),
                        intra: spec.intra.clone(),
                    };
                    if validate_mapping(&m, w, a).is_empty() && seen.insert(m.to_json()) {
                        out.push(m);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn cartesian<T: Clone>(options: &[Vec<T>]) -> Vec<Vec<T>> {
    options.iter().fold(vec![Vec::new()], |acc, opts| {
        acc.iter()
            .flat_map(|prefix| {
                opts.iter().map(move |o| {
                    let mut v = prefix.clone();
                    v.push(o.clone());
                    v
                })
            })
            .collect()
    })
}

/// One evaluated mapping.
#[derive(Clone, PartialEq, Debug)]
pub struct Point {
    pub mapping: Mapping,
    pub schedule: String,
    pub partitions: String,
    pub retention: String,
    pub parallelism: String,
    pub occupancy_words: u64,
    pub offchip_words: u64,
    pub recompute_ops: u64,
    pub latency_cycles: u64,
    pub energy_pj: f64,
    pub feasible: bool,
    pub energy_breakdown: BTreeMap<String, f64>,
    /// On-chip peak words per tensor, summed over levels.
    pub occupancy_breakdown: BTreeMap<String, u64>,
}

impl Point {
    pub fn objective(&self, o: Objective) -> f64 {
        match o {
            Objective::Occupancy => self.occupancy_words as f64,
            Objective::Offchip => self.offchip_words as f64,
            Objective::Recompute => self.recompute_ops as f64,
            Objective::Latency => self.latency_cycles as f64,
            Objective::Energy => self.energy_pj,
        }
    }
}

pub fn evaluate_point(w: &FusionSet, a: &Architecture, m: &Mapping) -> Result<Point, EvalError> {
    let ev = evaluate(w, m, a)?;
    let met = &ev.metrics;
    let occupancy_breakdown = w
        .tensors()
        .iter()
        .enumerate()
        .map(|(t, info)| (info.name.clone(), met.occupancy.per_tensor.iter().skip(1).map(|lv| lv[t]).sum()))
        .collect();
    Ok(Point {
        mapping: m.clone(),
        schedule: m.schedule_label(),
        partitions: m.partitions_label(),
        retention: m.retention_label(),
        parallelism: match m.inter.parallelism {
            Parallelism::Sequential => "sequential".into(),
            Parallelism::Pipeline => "pipeline".into(),
        },
        occupancy_words: met.onchip_occupancy(),
        offchip_words: met.offchip_words,
        recompute_ops: met.total_recompute(),
        latency_cycles: met.latency_cycles,
        energy_pj: met.energy.total,
        feasible: met.feasible,
        energy_breakdown: met.energy.breakdown.clone(),
        occupancy_breakdown,
    })
}

/// Evaluates in parallel; the result order matches `mappings`.
pub fn evaluate_all(w: &FusionSet, a: &Architecture, mappings: &[Mapping], jobs: Option<usize>) -> Result<Vec<Point>, MapperError> {
    let run = || {
        mappings
            .par_iter()
            .map(|m| evaluate_point(w, a, m).map_err(|source| MapperError::Eval { mapping: m.to_json(), source }))
            .collect::<Result<Vec<_>, _>>()
    };
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| MapperError::Pool(e.to_string()))?
            .install(run),
        None => run(),
    }
}

/// Indices of the non-dominated vectors, ascending. Of identical vectors the
/// first is kept.
pub fn pareto_indices(vectors: &[Vec<f64>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    order.sort_by(|&i, &j| {
        vectors[i]
            .iter()
            .zip(&vectors[j])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut front: Vec<usize> = Vec::new();
    for i in order {
        let covered = front.iter().any(|&f| vectors[f].iter().zip(&vectors[i]).all(|(x, y)| x <= y));
        if !covered {
            front.push(i);
        }
    }
    front.sort_unstable();
    front
}

/// Feasible, non-dominated points on the chosen objectives.
pub fn pareto_filter(points: &[Point], objectives: &[Objective]) -> Vec<Point> {
    assert!(!objectives.is_empty(), "pareto_filter needs at least one objective");
    let feasible: Vec<&Point> = points.iter().filter(|p| p.feasible).collect();
    let vecs: Vec<Vec<f64>> = feasible.iter().map(|p| objectives.iter().map(|&o| p.objective(o)).collect()).collect();
    pareto_indices(&vecs).into_iter().map(|i| feasible[i].clone()).collect()
}

/// Enumerates, evaluates and filters; infeasible mappings are pruned.
pub fn search(spec: &MapspaceSpec, w: &FusionSet, a: &Architecture, jobs: Option<usize>) -> Result<Vec<Point>, MapperError> {
    let a = match spec.capacity {
        Some(c) => a.with_capacity(Some(c)),
        None => a.clone(),
    };
    let mappings = enumerate_mapspace(spec, w, &a)?;
    if mappings.is_empty() {
        return Err(MapperError::EmptyMapspace);
    }
    log::info!("evaluating {} mappings", mappings.len());
    let points = evaluate_all(w, &a, &mappings, jobs)?;
    Ok(pareto_filter(&points, &spec.objectives))
}

pub const CSV_HEADER: &str =
    "study,schedule,partitions,retention,parallelism,occupancy_words,offchip_words,recompute_ops,latency_cycles,energy_pj,breakdown_json";

/// `{"energy": {...}, "occupancy": {...}}` with sorted keys.
pub fn breakdown_json(p: &Point) -> String {
    let energy: BTreeMap<&str, f64> = p.energy_breakdown.iter().map(|(k, v)| (k.as_str(), (v * 1000.0).round() / 1000.0)).collect();
    serde_json::json!({ "energy": energy, "occupancy": p.occupancy_breakdown }).to_string()
}

pub fn to_csv(rows: &[(String, Point)]) -> String {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    wr.write_record(CSV_HEADER.split(',')).expect("in-memory write");
    for (study, p) in rows {
        wr.write_record([
            study.clone(),
            p.schedule.clone(),
            p.partitions.clone(),
            p.retention.clone(),
            p.parallelism.clone(),
            p.occupancy_words.to_string(),
            p.offchip_words.to_string(),
            p.recompute_ops.to_string(),
            p.latency_cycles.to_string(),
            format!("{:.3}", p.energy_pj),
            breakdown_json(p),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(wr.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Study {
    TilingChoice,
    RecomputeTradeoff,
    PerTensorRetain,
    PerFmapChoice,
    FuseOrNot,
}

impl Study {
    pub const ALL: [Study; 5] = [Study::TilingChoice, Study::RecomputeTradeoff, Study::PerTensorRetain, Study::PerFmapChoice, Study::FuseOrNot];

    pub fn name(self) -> &'static str {
        match self {
            Study::TilingChoice => "tiling_choice",
            Study::RecomputeTradeoff => "recompute_tradeoff",
            Study::PerTensorRetain => "per_tensor_retain",
            Study::PerFmapChoice => "per_fmap_choice",
            Study::FuseOrNot => "fuse_or_not",
        }
    }

    /// Repo-chosen desk-scale shapes.
    pub fn default_shapes(self) -> Shapes {
        let conv = |m| LayerKind::Conv { m, r: 3, s: 3, stride: 1 };
        match self {
            Study::TilingChoice | Study::PerTensorRetain | Study::FuseOrNot => Shapes::Conv { input: (4, 8, 8), layers: vec![conv(8), conv(4)] },
            Study::RecomputeTradeoff => {
                Shapes::Conv { input: (4, 8, 8), layers: vec![LayerKind::Pwise { m: 8 }, LayerKind::Dwise { r: 3, s: 3 }, LayerKind::Pwise { m: 4 }] }
            }
            Study::PerFmapChoice => Shapes::Conv { input: (2, 8, 8), layers: vec![conv(4), conv(4), conv(2)] },
        }
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Study {
    type Err = MapperError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Study::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| MapperError::UnknownStudy(s.to_string()))
    }
}

/// Rank-shape configuration of a case-study fusion set.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Shapes {
    Conv { input: (i64, i64, i64), layers: Vec<LayerKind> },
    Fc { batch: i64, dims: Vec<i64> },
}

impl Shapes {
    pub fn build(&self) -> Result<FusionSet, WorkloadError> {
        match self {
            Shapes::Conv { input, layers } => conv_chain(*input, layers),
            Shapes::Fc { batch, dims } => fc_chain(*batch, dims),
        }
    }
}

/// Schedules of up to `max_len` distinct output ranks of the last einsum,
/// the untiled schedule first.
pub fn output_rank_schedules(w: &FusionSet, max_len: usize) -> Vec<Vec<String>> {
    let last = w.last_layer();
    let ranks: Vec<String> = last.output_dims.iter().map(|&d| last.space.ranks()[d].as_str().to_string()).collect();
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::<String>::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for r in &ranks {
                if !s.contains(r) {
                    let mut v = s.clone();
                    v.push(r.clone());
                    next.push(v);
                }
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Rows of a case study, each tagged with its study label.
pub fn case_study(study: Study, shapes: &Shapes, a: &Architecture, jobs: Option<usize>) -> Result<Vec<(String, Point)>, MapperError> {
    let w = shapes.build()?;
    let a = a.with_capacity(None);
    let run = |label: &str, spec: &MapspaceSpec, w: &FusionSet| -> Result<Vec<(String, Point)>, MapperError> {
        let ms = enumerate_mapspace(spec, w, &a)?;
        Ok(evaluate_all(w, &a, &ms, jobs)?.into_iter().map(|p| (label.to_string(), p)).collect())
    };
    let base = MapspaceSpec { schedules: output_rank_schedules(&w, 2), ..MapspaceSpec::default() };
    match study {
        Study::TilingChoice | Study::RecomputeTradeoff | Study::PerFmapChoice => run(study.name(), &base, &w),
        Study::PerTensorRetain => {
            let mut rows = run("per_tensor_retain/uniform", &MapspaceSpec { retention: RetentionMode::Uniform, ..base.clone() }, &w)?;
            rows.extend(run("per_tensor_retain/per_tensor", &base, &w)?);
            Ok(rows)
        }
        Study::FuseOrNot => {
            let mut rows = run("fuse_or_not/fused", &base, &w)?;
            rows.extend(layer_by_layer(&w, &a, jobs)?.into_iter().map(|p| ("fuse_or_not/layer_by_layer".to_string(), p)));
            Ok(rows)
        }
    }
}

/// The layer-at-a-time baseline: each layer is its own fusion set, so every
/// intermediate goes off chip once out and once in. One row per capacity
/// step: the cheapest combination whose largest per-layer occupancy fits.
pub fn layer_by_layer(w: &FusionSet, a: &Architecture, jobs: Option<usize>) -> Result<Vec<Point>, MapperError> {
    let mut fronts = Vec::new();
    for e in w.einsums() {
        let single = FusionSet::new(vec![e.clone()])?;
        let spec = MapspaceSpec { schedules: output_rank_schedules(&single, 2), ..MapspaceSpec::default() };
        let ms = enumerate_mapspace(&spec, &single, a)?;
        let pts = evaluate_all(&single, a, &ms, jobs)?;
        fronts.push(pareto_filter(&pts, &[Objective::Occupancy, Objective::Offchip]));
    }
    let mut budgets: Vec<u64> = fronts.iter().flatten().map(|p| p.occupancy_words).collect();
    budgets.sort_unstable();
    budgets.dedup();
    let mut rows: Vec<Point> = Vec::new();
    for b in budgets {
        let picks: Option<Vec<&Point>> = fronts
            .iter()
            .map(|f| f.iter().filter(|p| p.occupancy_words <= b).min_by_key(|p| (p.offchip_words, p.occupancy_words)))
            .collect();
        let Some(picks) = picks else { continue };
        let p = combine(&picks);
        if rows.last().is_none_or(|r| r.offchip_words > p.offchip_words) {
            rows.push(p);
        }
    }
    Ok(rows)
}

fn combine(picks: &[&Point]) -> Point {
    let join = |f: &dyn Fn(&Point) -> String| picks.iter().map(|p| f(p)).collect::<Vec<_>>().join(";");
    let mut energy_breakdown = BTreeMap::new();
    let mut occupancy_breakdown: BTreeMap<String, u64> = BTreeMap::new();
    for p in picks {
        for (k, v) in &p.energy_breakdown {
            *energy_breakdown.entry(k.clone()).or_insert(0.0) += v;
        }
        for (k, v) in &p.occupancy_breakdown {
            let e = occupancy_breakdown.entry(k.clone()).or_insert(0);
            *e = (*e).max(*v);
        }
    }
    Point {
        mapping: picks[0].mapping.clone(),
        schedule: join(&|p| p.schedule.clone()),
        partitions: join(&|p| p.partitions.clone()),
        retention: join(&|p| p.retention.clone()),
        parallelism: "sequential".into(),
        occupancy_words: picks.iter().map(|p| p.occupancy_words).max().unwrap_or(0),
        offchip_words: picks.iter().map(|p| p.offchip_words).sum(),
        recompute_ops: 0,
        latency_cycles: picks.iter().map(|p| p.latency_cycles).sum(),
        energy_pj: picks.iter().map(|p| p.energy_pj).sum(),
        feasible: true,
        energy_breakdown,
        occupancy_breakdown,
    }
}

/// Fewest off-chip words among rows with the label that fit the budget.
pub fn best_offchip(rows: &[(String, Point)], label: &str, budget: u64) -> Option<u64> {
    rows.iter().filter(|(l, p)| l == label && p.occupancy_words <= budget).map(|(_, p)| p.offchip_words).min()
}
