//! Sample inputs shared by the benchmarks.

use std::path::{Path, PathBuf};

use fusedflow::mapping::parse_mapping;
use fusedflow::workload::parse_workload;
use fusedflow::{Architecture, FusionSet, Mapping, MapspaceSpec};

pub fn config(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(rel)
}

fn read(rel: &str) -> String {
    std::fs::read_to_string(config(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

pub fn workload(rel: &str) -> FusionSet {
    parse_workload(&read(rel)).expect("sample workload parses")
}

pub fn arch(rel: &str) -> Architecture {
    Architecture::parse(&read(rel)).expect("sample arch parses")
}

pub fn mapping(rel: &str) -> Mapping {
    parse_mapping(&read(rel)).expect("sample mapping parses")
}

pub fn mapspace(rel: &str) -> MapspaceSpec {
    MapspaceSpec::parse(&read(rel)).expect("sample mapspace parses")
}
