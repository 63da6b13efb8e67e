//! Seeded random fusion sets, architectures and mappings for cross-checking
//! the analytical model against the oracle.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{Architecture, Compute, Level};
use crate::mapping::{bind, Depth, InterLayerMapping, IntraLayerLoop, LoopKind, Mapping, Parallelism, Partition, RetentionChoice};
use crate::templates::{conv_chain, fc_chain, LayerKind};
use crate::workload::{FusionSet, TensorRole};

/// Upper bound on the unmapped op count of a generated fusion set.
pub const MAX_OPS: u64 = 30_000;

#[derive(Clone, Debug)]
pub struct FuzzCase {
    pub seed: u64,
    pub workload: FusionSet,
    pub arch: Architecture,
    pub mapping: Mapping,
}

pub fn generate(seed: u64) -> FuzzCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let workload = loop {
        if let Some(w) = random_workload(&mut rng) {
            if w.total_ops() <= MAX_OPS {
                break w;
            }
        }
    };
    let arch = random_arch(&mut rng);
    let mapping = (0..200)
        .map(|_| random_mapping(&mut rng, &workload, &arch))
        .find(|m| bind(m, &workload, &arch).is_ok())
        .unwrap_or_else(|| plain_mapping(&workload, &arch));
    FuzzCase { seed, workload, arch, mapping }
}

fn random_workload(rng: &mut ChaCha8Rng) -> Option<FusionSet> {
    let n = rng.random_range(2..=3);
    if rng.random_bool(0.2) {
        let dims: Vec<i64> = (0..=n).map(|_| rng.random_range(1..=8)).collect();
        return fc_chain(rng.random_range(1..=6), &dims).ok();
    }
    let c = rng.random_range(1..=4);
    let h = rng.random_range(3..=8);
    let w = if rng.random_bool(0.5) { 1 } else { rng.random_range(3..=6) };
    let kinds: Vec<LayerKind> = (0..n)
        .map(|_| match rng.random_range(0..4) {
            0 => LayerKind::Conv { m: rng.random_range(1..=4), r: rng.random_range(1..=3), s: rng.random_range(1..=3), stride: 1 },
            1 => LayerKind::Conv { m: rng.random_range(1..=3), r: rng.random_range(1..=3), s: rng.random_range(1..=2), stride: 2 },
            2 => LayerKind::Pwise { m: rng.random_range(1..=4) },
            _ => LayerKind::Dwise { r: rng.random_range(2..=3), s: rng.random_range(2..=3) },
        })
        .collect();
    conv_chain((c, h, w), &kinds).ok()
}

fn random_arch(rng: &mut ChaCha8Rng) -> Architecture {
    let n = rng.random_range(2..=3);
    let names = ["DRAM", "GLB", "RF"];
    let levels = (0..n)
        .map(|i| Level {
            name: names[i].to_string(),
            capacity: if i == 0 { None } else { Some(rng.random_range(64..=4096)) },
            bandwidth: rng.random_range(1..=8),
            read_energy: [200.0, 6.0, 1.0][i],
            write_energy: [200.0, 6.5, 1.0][i],
            fanout: *[1u64, 2, 4].choose(rng).expect("nonempty"),
            hop_energy: [0.0, 0.5, 0.1][i],
        })
        .collect();
    Architecture {
        levels,
        compute: Compute {
            units: rng.random_range(1..=8),
            ops_per_cycle_per_unit: rng.random_range(1..=2),
            op_energy: 0.5,
            pipeline_stages_supported: 3,
        },
    }
}

fn random_mapping(rng: &mut ChaCha8Rng, w: &FusionSet, a: &Architecture) -> Mapping {
    let last = w.last_layer();
    let k = a.innermost();
    let mut partitions = Vec::new();
    let mut cur: BTreeMap<usize, i64> = BTreeMap::new();
    for _ in 0..rng.random_range(0..=2) {
        let d = rng.random_range(0..last.shape.len());
        let top = cur.get(&d).map_or(last.shape[d], |&t| t - 1);
        if top < 1 {
            continue;
        }
        let t = rng.random_range(1..=top);
        cur.insert(d, t);
        partitions.push(Partition { rank: last.space.ranks()[d].clone(), tile_size: t });
    }
    let np = partitions.len();
    let retention: Vec<RetentionChoice> = w
        .tensors()
        .iter()
        .map(|t| {
            let floor = if t.role == TensorRole::Intermediate { 1 } else { 0 };
            let level = rng.random_range(floor..=k);
            let depth = if rng.random_bool(0.2) { Depth::None } else { Depth::Tiles(rng.random_range(0..=np)) };
            RetentionChoice { tensor: t.name.clone(), depth, level: a.levels[level].name.clone() }
        })
        .collect();
    let mut intra = BTreeMap::new();
    for layer in w.layers() {
        let floor = layer
            .tensors()
            .map(|t| retention.iter().find(|r| r.tensor == w.tensor(t).name).and_then(|r| a.level_index(&r.level)).unwrap_or(0))
            .max()
            .unwrap_or(0);
        let mut loops = Vec::new();
        let mut level = floor;
        let mut tiles: BTreeMap<usize, i64> = BTreeMap::new();
        for _ in 0..rng.random_range(0..=3) {
            level = rng.random_range(level..=k);
            let d = rng.random_range(0..layer.shape.len());
            let top = tiles.get(&d).map_or(layer.shape[d], |&t| t - 1);
            if top < 1 {
                continue;
            }
            let spatial = rng.random_bool(0.35);
            let tile = if spatial && level == k { 1 } else { rng.random_range(1..=top) };
            tiles.insert(d, tile);
            loops.push(IntraLayerLoop {
                rank: layer.space.ranks()[d].clone(),
                tile_size: tile,
                kind: if spatial { LoopKind::Spatial } else { LoopKind::Temporal },
                level: a.levels[level].name.clone(),
            });
        }
        if !loops.is_empty() {
            intra.insert(layer.name.clone(), loops);
        }
    }
    let parallelism = if rng.random_bool(0.3) { Parallelism::Pipeline } else { Parallelism::Sequential };
    Mapping { inter: InterLayerMapping { partitions, parallelism }, retention, intra }
}

/// Untiled fusion with every tensor retained at the innermost level.
pub fn plain_mapping(w: &FusionSet, a: &Architecture) -> Mapping {
    let k = a.innermost().max(1).min(a.levels.len() - 1);
    Mapping {
        inter: InterLayerMapping::default(),
        retention: w
            .tensors()
            .iter()
            .map(|t| RetentionChoice { tensor: t.name.clone(), depth: Depth::Tiles(0), level: a.levels[k].name.clone() })
            .collect(),
        intra: BTreeMap::new(),
    }
}
