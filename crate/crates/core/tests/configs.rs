use std::fs;
use std::path::{Path, PathBuf};

use fusedflow::mapper::{MapspaceSpec, Shapes};
use fusedflow::mapping::parse_mapping;
use fusedflow::workload::parse_workload;
use fusedflow::{bind, compare, evaluate, simulate, Architecture};

fn configs(dir: &str) -> Vec<PathBuf> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(dir);
    let mut v: Vec<PathBuf> = fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    assert!(!v.is_empty(), "no configs under {dir}");
    v
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn samples_round_trip() {
    for p in configs("workloads") {
        let w = parse_workload(&read(&p)).unwrap();
        assert_eq!(parse_workload(&w.to_json()).unwrap(), w, "{}", p.display());
    }
    for p in configs("arch") {
        let a = Architecture::parse(&read(&p)).unwrap();
        assert_eq!(Architecture::parse(&a.to_json()).unwrap(), a, "{}", p.display());
    }
    for p in configs("mappings") {
        let m = parse_mapping(&read(&p)).unwrap();
        assert_eq!(parse_mapping(&m.to_json()).unwrap(), m, "{}", p.display());
    }
    for p in configs("mapspaces") {
        let s = MapspaceSpec::parse(&read(&p)).unwrap();
        assert_eq!(MapspaceSpec::parse(&s.to_json()).unwrap(), s, "{}", p.display());
    }
    for p in configs("shapes") {
        let s: Shapes = serde_json::from_str(&read(&p)).unwrap();
        let again: Shapes = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(again, s);
        s.build().unwrap();
    }
}

fn workload_for(mapping: &Path) -> PathBuf {
    let stem = mapping.file_stem().unwrap().to_str().unwrap();
    configs("workloads")
        .into_iter()
        .filter(|w| stem.starts_with(w.file_stem().unwrap().to_str().unwrap()))
        .max_by_key(|w| w.as_os_str().len())
        .unwrap()
}

#[test]
fn sample_mappings_match_the_oracle() {
    let arch = configs("arch").into_iter().find(|p| p.ends_with("two_level.json")).unwrap();
    let a = Architecture::parse(&read(&arch)).unwrap();
    for p in configs("mappings") {
        let w = parse_workload(&read(&workload_for(&p))).unwrap();
        let m = parse_mapping(&read(&p)).unwrap();
        if p.file_stem().unwrap().to_str().unwrap().contains("offchip") {
            let errs = bind(&m, &w, &a).unwrap_err();
            assert!(errs.iter().any(|v| v.rule == "intermediate-offchip"), "{errs:?}");
            continue;
        }
        let bm = bind(&m, &w, &a).unwrap();
        let ev = evaluate(&w, &m, &a).unwrap();
        let or = simulate(&w, &bm, &a, 1 << 24).unwrap();
        compare(&w, &a, &ev, &or).unwrap_or_else(|mm| panic!("{}: {mm:?}", p.display()));
    }
}
