use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn cfg(rel: &str) -> String {
    configs().join(rel).to_str().unwrap().to_string()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusedflow")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn conv_conv(cmd: &str, arch: &str) -> Vec<String> {
    vec![cmd.into(), "--workload".into(), cfg("workloads/conv_conv.json"), "--arch".into(), cfg(arch)]
}

fn args(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

#[test]
fn evaluate_writes_every_metric() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let mut a = conv_conv("evaluate", "arch/two_level.json");
    a.extend(["--mapping".into(), cfg("mappings/conv_conv_p2q2.json"), "--out".into(), out.to_str().unwrap().into()]);
    let o = run(&args(&a));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    for key in ["latency", "energy", "occupancy", "offchip_words", "recompute_ops", "feasible"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert!(v["occupancy"]["GLB"]["per_tensor"]["Fmap2"].as_u64().unwrap() > 0);
}

#[test]
fn offchip_intermediate_is_rejected_with_rule() {
    let mut a = conv_conv("evaluate", "arch/two_level.json");
    a.extend(["--mapping".into(), cfg("mappings/conv_conv_offchip_fmap2.json")]);
    let o = run(&args(&a));
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("conv_conv_offchip_fmap2.json") && err.contains("retention[2]") && err.contains("[intermediate-offchip]"), "{err}");
}

#[test]
fn over_capacity_exits_2_with_report() {
    let mut a = conv_conv("evaluate", "arch/tiny_glb.json");
    a.extend(["--mapping".into(), cfg("mappings/conv_conv_p2q2.json")]);
    let o = run(&args(&a));
    assert_eq!(code(&o), 2);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["feasible"], false);
    assert!(!v["capacity_violations"].as_array().unwrap().is_empty());
}

#[test]
fn malformed_workload_names_position() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"einsums\": [\n  {\"name\": }\n]}").unwrap();
    let o = run(&["evaluate", "--workload", bad.to_str().unwrap(), "--arch", &cfg("arch/two_level.json"), "--mapping", &cfg("mappings/fc_fc_d2.json")]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("bad.json") && stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn search_is_deterministic_across_job_counts() {
    let mut a = conv_conv("search", "arch/two_level.json");
    a.extend(["--mapspace".into(), cfg("mapspaces/conv_conv_recompute.json")]);
    let mut one = a.clone();
    one.extend(["--jobs".into(), "1".into()]);
    let mut four = a.clone();
    four.extend(["--jobs".into(), "4".into()]);
    let (x, y) = (run(&args(&one)), run(&args(&four)));
    assert_eq!(code(&x), 0, "{}", stderr(&x));
    assert_eq!(x.stdout, y.stdout);
    assert!(stdout(&x).starts_with("study,schedule,partitions,retention,parallelism,"));
}

#[test]
fn empty_mapspace_exits_1() {
    let mut a = conv_conv("search", "arch/two_level.json");
    a.extend(["--mapspace".into(), cfg("mapspaces/empty.json")]);
    let o = run(&args(&a));
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("empty mapspace"));
}

/// (occupancy, offchip) pairs from a search CSV.
fn front(text: &str) -> Vec<(u64, u64)> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let h = rd.headers().unwrap().clone();
    let col = |name: &str| h.iter().position(|c| c == name).unwrap();
    let (occ, off) = (col("occupancy_words"), col("offchip_words"));
    rd.records().map(|r| r.unwrap()).map(|r| (r[occ].parse().unwrap(), r[off].parse().unwrap())).collect()
}

#[test]
fn per_tensor_front_dominates_uniform() {
    let run_space = |f: &str| {
        let mut a = conv_conv("search", "arch/two_level.json");
        a.extend(["--mapspace".into(), cfg(f)]);
        let o = run(&args(&a));
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        front(&stdout(&o))
    };
    let per = run_space("mapspaces/conv_conv_per_tensor.json");
    let uni = run_space("mapspaces/conv_conv_uniform.json");
    for &(occ, off) in &uni {
        assert!(per.iter().any(|&(o, f)| o <= occ && f <= off), "uniform point ({occ}, {off}) not dominated");
    }
}

#[test]
fn tiling_choice_study_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    let o = run(&["case-study", "tiling_choice", "--shapes", &cfg("shapes/conv_conv_small.json"), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(out).unwrap();
    let schedules: std::collections::BTreeSet<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert!(schedules.contains("untiled") && schedules.contains("P2") && schedules.contains("M2>P2"), "{schedules:?}");
}

#[test]
fn unknown_study_exits_1() {
    assert_eq!(code(&run(&["case-study", "nope"])), 1);
}

#[test]
fn shipped_samples_pass_oracle_check() {
    let pairs = [
        ("workloads/conv_conv.json", "mappings/conv_conv_p2q2.json"),
        ("workloads/conv_conv.json", "mappings/conv_conv_pipeline.json"),
        ("workloads/fc_fc.json", "mappings/fc_fc_d2.json"),
        ("workloads/pwise_dwise_pwise.json", "mappings/pwise_dwise_pwise_p3.json"),
    ];
    for (w, m) in pairs {
        let o = run(&["oracle-check", "--workload", &cfg(w), "--arch", &cfg("arch/two_level.json"), "--mapping", &cfg(m)]);
        assert_eq!(code(&o), 0, "{m}: {}", stderr(&o));
    }
}

#[test]
fn oracle_fuzz_passes() {
    let o = run(&["oracle-check", "--fuzz", "100", "--seed", "7"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("100 fuzz cases match"));
}

#[test]
fn corrupted_count_exits_3() {
    let o = run(&[
        "oracle-check",
        "--workload",
        &cfg("workloads/fc_fc.json"),
        "--arch",
        &cfg("arch/two_level.json"),
        "--mapping",
        &cfg("mappings/fc_fc_d2.json"),
        "--inject-mismatch",
    ]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("mismatch in compute_ops"), "{}", stderr(&o));
}

#[test]
fn op_limit_is_enforced() {
    let o = run(&[
        "oracle-check",
        "--workload",
        &cfg("workloads/conv_conv.json"),
        "--arch",
        &cfg("arch/two_level.json"),
        "--mapping",
        &cfg("mappings/conv_conv_p2q2.json"),
        "--op-limit",
        "100",
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--op-limit"));
}

#[test]
fn oracle_trace_is_csv() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let o = run(&[
        "oracle-check",
        "--workload",
        &cfg("workloads/fc_fc.json"),
        "--arch",
        &cfg("arch/two_level.json"),
        "--mapping",
        &cfg("mappings/fc_fc_d2.json"),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert!(std::fs::read_to_string(trace).unwrap().starts_with("step,level,tensor,occupancy\n"));
}

#[test]
fn report_prints_action_table() {
    let mut a = conv_conv("report", "arch/two_level.json");
    a.extend(["--mapping".into(), cfg("mappings/conv_conv_pipeline.json")]);
    let o = run(&args(&a));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("GLB (hops") && text.contains("feasible       true"), "{text}");
}

#[test]
fn evaluate_output_is_byte_stable() {
    let mut a = conv_conv("evaluate", "arch/two_level.json");
    a.extend(["--mapping".into(), cfg("mappings/conv_conv_pipeline.json")]);
    assert_eq!(run(&args(&a)).stdout, run(&args(&a)).stdout);
}
