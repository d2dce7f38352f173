mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{instance_a, instance_c};
use mcbench::{BlockBid, Direction, Instance, PriceBounds, Segment};

fn mcbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcbench"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, instance: &Instance) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, instance.to_json()).unwrap();
    path
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_instance_c() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "c.json", &instance_c());
    let out = mcbench(&["solve", s(&file), "--rule", "R1", "--gap", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert!((v["ts"].as_f64().unwrap() - 2800.0).abs() < 1e-6);
    assert_eq!(v["status"], "Optimal");
    assert_eq!(v["accepted"][0], "b");
    assert_eq!(v["measures"]["n_pab"], 1);

    let out = mcbench(&["solve", s(&file), "--rule", "R2"]);
    assert_eq!(out.status.code(), Some(0));
    assert!((json(&out)["measures"]["tlp"].as_f64().unwrap() - 1200.0).abs() < 1e-6);
}

#[test]
fn solve_writes_to_out_file() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "a.json", &instance_a());
    let target = dir.path().join("solution.json");
    let out = mcbench(&["solve", s(&file), "--out", s(&target)]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(target).unwrap()).unwrap();
    assert_eq!(v["prices"][0], 50.0);
}

#[test]
fn malformed_input_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.json");
    fs::write(&file, "{ not json").unwrap();
    let out = mcbench(&["solve", s(&file)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("malformed instance"));

    let invalid = Instance::new(1, PriceBounds::new(0.0, 100.0)).with_segment(
        0,
        Direction::Supply,
        Segment::new(0.0, 100.0, 5.0),
    );
    let file = write(dir.path(), "invalid.json", &invalid);
    let out = mcbench(&["solve", s(&file)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("supply quantity"));
}

#[test]
fn forced_timeout_exits_2_with_incumbent() {
    let dir = tempfile::tempdir().unwrap();
    let gen = mcbench(&[
        "generate", "--profile", "TR-2015", "--downscale", "3", "--seeds", "7", "--out",
        s(dir.path()),
    ]);
    assert_eq!(gen.status.code(), Some(0));
    let file = dir.path().join("TR-2015-d3_seed7.json");
    let out = mcbench(&["solve", s(&file), "--time-limit", "0.000001", "--gap", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let v = json(&out);
    assert_eq!(v["status"], "TimeLimit");
    assert!(v["ts"].as_f64().is_some());
}

#[test]
fn infeasible_rule_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let inst = instance_a().with_block(BlockBid::new("big", 100.0, [(0, 500.0)]));
    let file = write(dir.path(), "big.json", &inst);
    let out = mcbench(&["solve", s(&file), "--rule", "R3"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(json(&out)["status"], "Infeasible");
}

#[test]
fn compare_needs_two_rules() {
    let out = mcbench(&["compare", "--profile", "TR-2015", "--downscale", "10", "--rules", "R1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn compare_identical_rules_on_identical_instances() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "x1.json", &instance_c());
    let b = write(dir.path(), "x2.json", &instance_c());
    let report = dir.path().join("report");
    let out = mcbench(&["compare", "--instances", s(&a), s(&b), "--rules", "R1,R1", "--out", s(&report)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut table = csv::Reader::from_path(report.join("table.csv")).unwrap();
    let headers = table.headers().unwrap().clone();
    let mean = headers.iter().position(|h| h == "mean_diff").unwrap();
    let mut rows = 0;
    for r in table.records() {
        assert_eq!(r.unwrap()[mean].parse::<f64>().unwrap(), 0.0);
        rows += 1;
    }
    assert_eq!(rows, 11);
    let instances = csv::Reader::from_path(report.join("instances.csv")).unwrap().records().count();
    assert_eq!(instances, 4);
}

#[test]
fn compare_with_everything_excluded_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    // Demand beyond all supply: the price sits at the cap.
    let capped = Instance::new(1, PriceBounds::new(0.0, 100.0))
        .with_segment(0, Direction::Supply, Segment::new(0.0, 50.0, -10.0))
        .with_segment(0, Direction::Demand, Segment::new(100.0, 100.0, 50.0));
    let a = write(dir.path(), "c1.json", &capped);
    let b = write(dir.path(), "c2.json", &capped);
    let out = mcbench(&["compare", "--instances", s(&a), s(&b), "--rules", "R1,R2"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn compare_report_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, workers: &str| {
        let out_dir = dir.path().join(name);
        let out = mcbench(&[
            "compare", "--profile", "TR-2013", "--downscale", "10", "--seeds", "1..6", "--gap", "0",
            "--workers", workers, "--out", s(&out_dir),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read_to_string(out_dir.join("table.csv")).unwrap()
    };
    let first = run("a", "1");
    assert_eq!(first, run("b", "1"));
    assert_eq!(first, run("c", "3"));
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["generate", "--profile", "TR-2015", "--seeds", "1..3", "--out", s(dir.path())];
    assert_eq!(mcbench(&args).status.code(), Some(0));
    let names: Vec<String> = (1..=3).map(|k| format!("TR-2015_seed{k}.json")).collect();
    let first: Vec<String> = names.iter().map(|n| fs::read_to_string(dir.path().join(n)).unwrap()).collect();
    assert_eq!(mcbench(&args).status.code(), Some(0));
    for (n, text) in names.iter().zip(&first) {
        assert_eq!(&fs::read_to_string(dir.path().join(n)).unwrap(), text);
    }
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 3);
}

#[test]
fn generate_downscaled_block_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = mcbench(&["generate", "--profile", "TR-2015", "--downscale", "10", "--seed", "4", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("TR-2015-d10_seed4.json")).unwrap();
    let inst = Instance::from_json(&text).unwrap();
    let supply = inst.blocks().iter().filter(|b| b.direction() == Some(Direction::Supply)).count();
    assert_eq!((supply, inst.blocks().len() - supply), (12, 2));
}

#[test]
fn unknown_profile_exits_1() {
    let out = mcbench(&["generate", "--profile", "TR-1999"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown profile"));
}

#[test]
fn profile_found_through_search_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut profile = mcbench::datagen::GeneratorProfile::builtin("TR-2012").unwrap().downscaled(20);
    profile.name = "tiny".into();
    fs::write(dir.path().join("tiny.json"), profile.to_json()).unwrap();
    let out_dir = dir.path().join("out");
    let out = Command::new(env!("CARGO_BIN_EXE_mcbench"))
        .args(["generate", "--profile", "tiny", "--out", s(&out_dir)])
        .env("MCBENCH_PROFILE_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("tiny_seed1.json").is_file());
}

#[test]
fn oracle_agrees_on_small_instances() {
    let dir = tempfile::tempdir().unwrap();
    for (name, inst) in [("c.json", instance_c()), ("a.json", instance_a())] {
        let file = write(dir.path(), name, &inst);
        let out = mcbench(&["oracle", s(&file)]);
        assert_eq!(out.status.code(), Some(0));
        let v = json(&out);
        assert_eq!(v.as_array().unwrap().len(), 3);
        assert!(v.as_array().unwrap().iter().all(|c| c["verdict"] == "match"));
    }
}

#[test]
fn oracle_refuses_large_instances() {
    let dir = tempfile::tempdir().unwrap();
    let mut inst = instance_a();
    for k in 0..20 {
        inst.add_block(BlockBid::new(format!("b{k}"), 40.0 + k as f64, [(0, -1.0)]));
    }
    let file = write(dir.path(), "many.json", &inst);
    let out = mcbench(&["oracle", s(&file), "--rule", "R1"]);
    assert_eq!(out.status.code(), Some(1));
}
