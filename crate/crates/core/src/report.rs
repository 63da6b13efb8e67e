//! JSON metrics report and a plain-text action-count table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use serde_json::value::RawValue;

use crate::arch::Architecture;
use crate::metrics::Evaluation;
use crate::workload::FusionSet;

/// Energy in pJ with exactly three decimals.
fn pj(x: f64) -> Box<RawValue> {
    RawValue::from_string(format!("{x:.3}")).expect("fixed-point decimal is valid JSON")
}

#[derive(Serialize)]
struct EnergyReport {
    total: Box<RawValue>,
    breakdown: BTreeMap<String, Box<RawValue>>,
}

#[derive(Serialize)]
struct LevelOccupancy {
    total: u64,
    per_tensor: BTreeMap<String, u64>,
}

#[derive(Serialize)]
struct Report {
    latency: u64,
    compute_latency: u64,
    sequential_latency: u64,
    memory_latency: BTreeMap<String, u64>,
    energy: EnergyReport,
    occupancy: BTreeMap<String, LevelOccupancy>,
    offchip_words: u64,
    recompute_ops: u64,
    recompute_by_layer: BTreeMap<String, u64>,
    executed_ops: BTreeMap<String, u64>,
    feasible: bool,
    capacity_violations: Vec<String>,
    /// Occupancy counts retained data only; no double-buffer headroom.
    double_buffering: bool,
    iterations: usize,
    tile_classes: usize,
}

pub fn metrics_json(w: &FusionSet, a: &Architecture, ev: &Evaluation) -> String {
    let m = &ev.metrics;
    let occupancy = a
        .levels
        .iter()
        .enumerate()
        .skip(1)
        .map(|(l, lv)| {
            let per_tensor = w.tensors().iter().enumerate().map(|(t, info)| (info.name.clone(), m.occupancy.per_tensor[l][t])).collect();
            (lv.name.clone(), LevelOccupancy { total: m.occupancy.peak[l], per_tensor })
        })
        .collect();
    let report = Report {
        latency: m.latency_cycles,
        compute_latency: m.compute_latency_cycles,
        sequential_latency: m.sequential_latency_cycles,
        memory_latency: a.levels.iter().zip(&m.memory_latency_cycles).map(|(lv, &c)| (lv.name.clone(), c)).collect(),
        energy: EnergyReport { total: pj(m.energy.total), breakdown: m.energy.breakdown.iter().map(|(k, &v)| (k.clone(), pj(v))).collect() },
        occupancy,
        offchip_words: m.offchip_words,
        recompute_ops: m.total_recompute(),
        recompute_by_layer: m.recompute_ops.clone(),
        executed_ops: w.layers().iter().zip(&ev.executed_ops).map(|(l, &n)| (l.name.clone(), n)).collect(),
        feasible: m.feasible,
        capacity_violations: m.capacity_violations.clone(),
        double_buffering: false,
        iterations: ev.iterations,
        tile_classes: ev.tile_classes,
    };
    let mut s = serde_json::to_string_pretty(&report).expect("report serializes");
    s.push('\n');
    s
}

/// Fills, reads and updates per level and tensor, then hops and totals.
pub fn action_table(w: &FusionSet, a: &Architecture, ev: &Evaluation) -> String {
    let c = &ev.counts;
    let width = w.tensors().iter().map(|t| t.name.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    for (l, lv) in a.levels.iter().enumerate() {
        let _ = writeln!(out, "{} (hops {})", lv.name, c.hops[l]);
        let _ = writeln!(out, "  {:width$}  {:>10}  {:>10}  {:>10}", "tensor", "fills", "reads", "updates");
        for (t, info) in w.tensors().iter().enumerate() {
            let _ = writeln!(out, "  {:width$}  {:>10}  {:>10}  {:>10}", info.name, c.fills[l][t], c.reads[l][t], c.updates[l][t]);
        }
    }
    let m = &ev.metrics;
    let _ = writeln!(out, "compute ops    {}", c.compute_ops);
    let _ = writeln!(out, "latency        {} cycles", m.latency_cycles);
    let _ = writeln!(out, "energy         {:.3} pJ", m.energy.total);
    let _ = writeln!(out, "offchip words  {}", m.offchip_words);
    let _ = writeln!(out, "recompute ops  {}", m.total_recompute());
    let _ = writeln!(out, "feasible       {}", m.feasible);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::{Depth, Mapping, RetentionChoice};
    use crate::metrics::evaluate;
    use crate::templates::{conv_chain, LayerKind};

    #[test]
    fn energy_has_three_decimals() {
        let w = conv_chain((1, 4, 1), &[LayerKind::Pwise { m: 1 }]).unwrap();
        let a = Architecture::parse(
            r#"{"levels":[{"name":"DRAM","bandwidth":1,"read_energy":1,"write_energy":1},
                {"name":"Buf","capacity":2,"bandwidth":1,"read_energy":0.1,"write_energy":0.1}],
                "compute":{"units":1,"op_energy":0.5}}"#,
        )
        .unwrap();
        let m = Mapping {
            inter: Default::default(),
            retention: w.tensors().iter().map(|t| RetentionChoice { tensor: t.name.clone(), depth: Depth::Tiles(0), level: "Buf".into() }).collect(),
            intra: Default::default(),
        };
        let ev = evaluate(&w, &m, &a).unwrap();
        let json = metrics_json(&w, &a, &ev);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["feasible"], false);
        assert!(json.contains("\"compute\": 2.000"), "{json}");
        assert!(action_table(&w, &a, &ev).contains("DRAM (hops"));
    }
}
