use std::collections::BTreeMap;

use fusedflow::arch::{Architecture, Compute, Level};
use fusedflow::fuzz;
use fusedflow::mapping::{bind, Depth, InterLayerMapping, IntraLayerLoop, LoopKind, Mapping, Parallelism, Partition, RetentionChoice};
use fusedflow::metrics::evaluate_bound;
use fusedflow::oracle::{compare, simulate};
use fusedflow::templates::{conv_chain, LayerKind};
use fusedflow::workload::FusionSet;

fn two_level() -> Architecture {
    Architecture {
        levels: vec![
            Level { name: "DRAM".into(), capacity: None, bandwidth: 4, read_energy: 100.0, write_energy: 100.0, fanout: 1, hop_energy: 0.0 },
            Level { name: "Buf".into(), capacity: Some(100_000), bandwidth: 8, read_energy: 2.0, write_energy: 2.0, fanout: 4, hop_energy: 0.5 },
        ],
        compute: Compute { units: 4, ops_per_cycle_per_unit: 1, op_energy: 1.0, pipeline_stages_supported: 2 },
    }
}

fn check(w: &FusionSet, m: &Mapping, a: &Architecture) {
    let bm = bind(m, w, a).unwrap_or_else(|v| panic!("invalid mapping: {v:?}"));
    let ev = evaluate_bound(w, &bm, a).expect("analysis");
    let or = simulate(w, &bm, a, 2_000_000).expect("oracle");
    if let Err(mm) = compare(w, a, &ev, &or) {
        panic!("mismatch {mm:?}\nmapping {}", m.to_json());
    }
}

fn retain_all(w: &FusionSet, level: &str, depth: Depth) -> Vec<RetentionChoice> {
    w.tensors().iter().map(|t| RetentionChoice { tensor: t.name.clone(), depth, level: level.into() }).collect()
}

#[test]
fn single_conv_untiled() {
    let w = conv_chain((2, 6, 1), &[LayerKind::Conv { m: 3, r: 3, s: 1, stride: 1 }]).unwrap();
    let m = Mapping { inter: InterLayerMapping::default(), retention: retain_all(&w, "Buf", Depth::Tiles(0)), intra: BTreeMap::new() };
    check(&w, &m, &two_level());
}

#[test]
fn conv_conv_partitioned_each_depth() {
    let w = conv_chain((2, 8, 6), &[LayerKind::Conv { m: 2, r: 3, s: 3, stride: 1 }; 2]).unwrap();
    let a = two_level();
    for depth in [Depth::Tiles(0), Depth::Tiles(1), Depth::Tiles(2), Depth::None] {
        for par in [Parallelism::Sequential, Parallelism::Pipeline] {
            let m = Mapping {
                inter: InterLayerMapping {
                    partitions: vec![Partition { rank: "P2".into(), tile_size: 2 }, Partition { rank: "Q2".into(), tile_size: 2 }],
                    parallelism: par,
                },
                retention: retain_all(&w, "Buf", depth),
                intra: BTreeMap::new(),
            };
            check(&w, &m, &a);
        }
    }
}

#[test]
fn spatial_intra_nest() {
    let w = conv_chain((2, 6, 1), &[LayerKind::Pwise { m: 4 }, LayerKind::Conv { m: 2, r: 3, s: 1, stride: 2 }]).unwrap();
    let a = two_level();
    let mut intra = BTreeMap::new();
    intra.insert(
        "L1".to_string(),
        vec![IntraLayerLoop { rank: "M1".into(), tile_size: 1, kind: LoopKind::Spatial, level: "Buf".into() }],
    );
    intra.insert(
        "L2".to_string(),
        vec![IntraLayerLoop { rank: "C2".into(), tile_size: 2, kind: LoopKind::Temporal, level: "Buf".into() }],
    );
    let m = Mapping {
        inter: InterLayerMapping { partitions: vec![Partition { rank: "P2".into(), tile_size: 1 }], parallelism: Parallelism::Sequential },
        retention: retain_all(&w, "Buf", Depth::Tiles(1)),
        intra,
    };
    check(&w, &m, &a);
}

#[test]
fn fuzzed_cases_agree() {
    for seed in 0..40 {
        let case = fuzz::generate(seed);
        let bm = bind(&case.mapping, &case.workload, &case.arch).expect("fuzz mappings bind");
        let ev = evaluate_bound(&case.workload, &bm, &case.arch).expect("analysis");
        let or = simulate(&case.workload, &bm, &case.arch, 5_000_000).expect("oracle");
        if let Err(mm) = compare(&case.workload, &case.arch, &ev, &or) {
            panic!("seed {seed}: {mm:?}\nworkload {}\narch {}\nmapping {}", case.workload.to_json(), case.arch.to_json(), case.mapping.to_json());
        }
    }
}
