use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cprune::cli::load_model;
use cprune_core::{LaneAlignedModel, LatencyModel, PeriodEstimate};
use tempfile::TempDir;

fn cprune(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cprune"))
        .args(args)
        .current_dir(dir)
        .env_remove("CPRUNE_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = cprune(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn gen_mobilenet(dir: &Path, out: &str) -> PathBuf {
    ok(dir, &["gen", "--family", "mobilenet_like", "--base", "16", "--seed", "3", "--out", out]);
    dir.join(out).join("model.cpr")
}

#[test]
fn gen_is_byte_identical_for_a_seed() {
    let tmp = TempDir::new().unwrap();
    let a = gen_mobilenet(tmp.path(), "a");
    let b = gen_mobilenet(tmp.path(), "b");
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn auto_cluster_prune_counts_are_multiples_of_the_detected_sizes() {
    let tmp = TempDir::new().unwrap();
    let model = gen_mobilenet(tmp.path(), "m");
    let args = |out: &'static str| {
        vec!["prune", "--model", "m/model.cpr", "--method", "cluster", "--cluster-size", "auto", "--probes", "16", "--delta", "0.2", "--max-pruned", "48", "--out", out]
    };
    ok(tmp.path(), &args("run1"));
    let periods: BTreeMap<String, PeriodEstimate> =
        serde_json::from_slice(&std::fs::read(tmp.path().join("run1/periods.json")).unwrap()).unwrap();
    let before = load_model(&model).unwrap();
    let after = load_model(&tmp.path().join("run1/pruned.cpr")).unwrap();
    let mut total = 0;
    for (name, e) in &periods {
        let c0 = before.node(before.find(name).unwrap()).c_out().unwrap();
        let c1 = after.node(after.find(name).unwrap()).c_out().unwrap();
        assert_eq!((c0 - c1) % e.cluster_size, 0, "{name}: pruned {} with P = {}", c0 - c1, e.cluster_size);
        total += c0 - c1;
    }
    assert!(total > 0);

    // Same config and seeds: byte-identical artifacts.
    ok(tmp.path(), &args("run2"));
    for f in ["pruned.cpr", "prune_log.jsonl", "prune_log.csv", "propagation.jsonl", "periods.json", "sweeps.csv", "prune_summary.json"] {
        let a = std::fs::read(tmp.path().join("run1").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("run2").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between runs");
    }
}

#[test]
fn dims_report_shows_the_cluster_pruned_rows() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["gen", "--preset", "mobilenet-v1-backbone", "--out", "orig"]);
    ok(
        tmp.path(),
        &["gen", "--preset", "mobilenet-v1-backbone", "--remove", "conv7:96", "--remove", "conv8:16", "--remove", "conv9:16", "--out", "cl"],
    );
    let out = ok(tmp.path(), &["report", "--dims", "--model", "orig/model.cpr", "--pruned", "cl/model.cpr", "--out", "r"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let row = text.lines().find(|l| l.starts_with("conv7 ")).unwrap();
    let cells: Vec<&str> = row.split('|').map(str::trim).collect();
    assert_eq!(cells, ["conv7", "(512, 512, 1, 1)", "(416, 512, 1, 1)", "96"]);
    assert_eq!(std::fs::read_to_string(tmp.path().join("r/dims.txt")).unwrap(), text);
}

#[test]
fn profiling_a_too_small_layer_warns_and_succeeds() {
    let tmp = TempDir::new().unwrap();
    gen_mobilenet(tmp.path(), "m");
    let out = ok(tmp.path(), &["profile", "--model", "m/model.cpr", "--layers", "conv1", "--min-remaining", "30", "--probes", "4", "--out", "p"]);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("warning") && stderr.contains("conv1"), "{stderr}");
    let periods: BTreeMap<String, PeriodEstimate> =
        serde_json::from_slice(&std::fs::read(tmp.path().join("p/periods.json")).unwrap()).unwrap();
    assert!(periods["conv1"].skipped);
    assert_eq!(periods["conv1"].cluster_size, 1);
}

#[test]
fn exit_status_separates_config_data_and_success() {
    let tmp = TempDir::new().unwrap();
    gen_mobilenet(tmp.path(), "m");
    let code = |args: &[&str]| cprune(tmp.path(), args).status.code().unwrap();

    assert_eq!(code(&["eval", "--model", "m/model.cpr", "--probes", "2", "--out", "e"]), 0);
    assert_eq!(code(&["eval", "--model", "m/model.cpr", "--lane-width", "0"]), 2);
    assert_eq!(code(&["eval", "--model", "missing.cpr"]), 2);
    assert_eq!(code(&["prune", "--model", "m/model.cpr", "--backend", "measured"]), 2);
    assert_eq!(code(&["prune", "--model", "m/model.cpr", "--method", "sideways"]), 2);

    let mut bytes = std::fs::read(tmp.path().join("m/model.cpr")).unwrap();
    let n = bytes.len();
    bytes[n - 12] ^= 0xff;
    std::fs::write(tmp.path().join("bad.cpr"), bytes).unwrap();
    let out = cprune(tmp.path(), &["eval", "--model", "bad.cpr"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.cpr"));

    std::fs::write(tmp.path().join("trace.csv"), "layer_id,filters_remaining,latency_ms\nconv1,32,1.0\n").unwrap();
    let out = cprune(tmp.path(), &["eval", "--model", "m/model.cpr", "--backend", "measured", "--trace-csv", "trace.csv", "--probes", "2"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_file_is_read_and_flags_win() {
    let tmp = TempDir::new().unwrap();
    gen_mobilenet(tmp.path(), "m");
    std::fs::write(tmp.path().join("run.toml"), "model = \"m/model.cpr\"\nprobes = 4\nout = \"from_file\"\n").unwrap();
    let run = |extra: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_cprune"));
        cmd.arg("eval").args(extra).current_dir(tmp.path()).env("CPRUNE_CONFIG", "run.toml");
        cmd.output().unwrap()
    };
    assert!(run(&[]).status.success());
    assert!(tmp.path().join("from_file/eval.json").is_file());
    assert!(run(&["--out", "from_flag"]).status.success());
    let eval: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("from_flag/eval.json")).unwrap()).unwrap();
    assert_eq!(eval["probe_count"], 4);

    std::fs::write(tmp.path().join("run.toml"), "probez = 4\n").unwrap();
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("probez"));
}

#[test]
fn measured_trace_backend_profiles_a_recorded_sweep() {
    let tmp = TempDir::new().unwrap();
    let model = gen_mobilenet(tmp.path(), "m");
    let net = load_model(&model).unwrap();
    let layer = net.find("conv1").unwrap();
    let lane = LaneAlignedModel::default();
    let mut csv = String::from("layer_id,filters_remaining,latency_ms\n");
    for remaining in 2..32 {
        let mut cut = net.clone();
        let req = cprune_core::PruneRequest::new(layer, (remaining..32).collect());
        cut = cprune_core::remove_filters(&cut, &req, 1).unwrap().0;
        csv += &format!("conv1,{remaining},{}\n", lane.network_latency(&cut).unwrap().total_ms);
    }
    std::fs::write(tmp.path().join("trace.csv"), csv).unwrap();
    ok(tmp.path(), &["profile", "--model", "m/model.cpr", "--backend", "measured", "--trace-csv", "trace.csv", "--layers", "conv1", "--probes", "4", "--out", "p"]);
    let periods: BTreeMap<String, PeriodEstimate> =
        serde_json::from_slice(&std::fs::read(tmp.path().join("p/periods.json")).unwrap()).unwrap();
    assert_eq!(periods["conv1"].p_lat, 8);
}

#[test]
fn gain_report_from_csv() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("fps.csv"), "setup,without_pruning,after_pruning\nPi+NCS,6.346,6.427\nsame,2.0,2.0\n").unwrap();
    let out = ok(tmp.path(), &["report", "--gain-csv", "fps.csv", "--direction", "throughput", "--out", "r"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("1.28%") && text.contains("0.00%"), "{text}");
    let csv = std::fs::read_to_string(tmp.path().join("r/gain.csv")).unwrap();
    assert!(csv.starts_with("setup,without_pruning,after_pruning,gain_percent\n"));
    assert!(csv.contains("Pi+NCS,6.346,6.427,1.2763"));

    std::fs::write(tmp.path().join("zero.csv"), "setup,without_pruning,after_pruning\nx,0,1\n").unwrap();
    assert_eq!(cprune(tmp.path(), &["report", "--gain-csv", "zero.csv"]).status.code(), Some(3));
}
