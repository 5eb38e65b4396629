use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const FAST: &str = "max_epochs = 25\nnhid2 = 16\nruns = 2\nseed = 3\n";

fn bscnets(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bscnets"))
        .args(args)
        .env("BSCNETS_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = bscnets(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Ring of 40 nodes with chords every 3 and every 7 steps.
fn edge_text() -> String {
    let mut out = String::from("# ring with chords\n");
    for i in 0..40 {
        out.push_str(&format!("{} {}\n", i, (i + 1) % 40));
        if i % 3 == 0 {
            out.push_str(&format!("{} {}\n", i, (i + 7) % 40));
        }
    }
    out
}

struct Fixture {
    dir: TempDir,
    data: PathBuf,
    config: PathBuf,
}

fn fixture() -> Fixture {
    let dir = TempDir::new().unwrap();
    let edges = dir.path().join("edges.in");
    fs::write(&edges, edge_text()).unwrap();
    let data = dir.path().join("ring");
    ok(&[
        "prepare",
        "--edges",
        s(&edges),
        "--synthesize-features",
        "--out",
        s(&data),
    ]);
    let config = dir.path().join("fast.toml");
    fs::write(&config, FAST).unwrap();
    Fixture { dir, data, config }
}

impl Fixture {
    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

#[test]
fn prepare_synthesizes_four_feature_columns() {
    let f = fixture();
    let stats = json(&f.data.join("stats.json"));
    assert_eq!(stats["n"], 40);
    assert_eq!(stats["m"], 54);
    assert_eq!(stats["q"], 4);
    let csv = fs::read_to_string(f.data.join("features.csv")).unwrap();
    assert_eq!(csv.lines().count(), 40);
    assert!(csv.lines().all(|l| l.split(',').count() == 4));
    let manifest = json(&f.data.join("manifest.json"));
    assert_eq!(manifest["command"], "prepare");
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn prepare_with_explicit_features() {
    let dir = TempDir::new().unwrap();
    let edges = dir.path().join("e.txt");
    let feats = dir.path().join("x.csv");
    fs::write(&edges, "0 1\n1 2\n").unwrap();
    fs::write(&feats, "1,2\n3,4\n5,6\n7,8\n").unwrap();
    let out = dir.path().join("b");
    ok(&[
        "prepare",
        "--edges",
        s(&edges),
        "--features",
        s(&feats),
        "--out",
        s(&out),
    ]);
    let stats = json(&out.join("stats.json"));
    assert_eq!(
        (stats["n"].as_u64(), stats["m"].as_u64(), stats["q"].as_u64()),
        (Some(4), Some(2), Some(2))
    );

    fs::write(&feats, "1,2\n").unwrap();
    let bad = bscnets(&[
        "prepare",
        "--edges",
        s(&edges),
        "--features",
        s(&feats),
        "--out",
        s(&out),
    ]);
    assert!(!bad.status.success());
    assert!(stderr(&bad).contains("x.csv"));
}

#[test]
fn missing_file_names_the_path() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("no_such_edges.txt");
    let out = bscnets(&[
        "prepare",
        "--edges",
        s(&missing),
        "--synthesize-features",
        "--out",
        s(dir.path()),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("no_such_edges.txt"), "{}", stderr(&out));

    let out = bscnets(&[
        "train",
        "--data",
        s(&dir.path().join("nowhere")),
        "--out",
        s(dir.path()),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("nowhere"), "{}", stderr(&out));
}

#[test]
fn parse_errors_report_the_line() {
    let dir = TempDir::new().unwrap();
    let edges = dir.path().join("e.txt");
    fs::write(&edges, "0 1\n1 two\n").unwrap();
    let out = bscnets(&[
        "prepare",
        "--edges",
        s(&edges),
        "--synthesize-features",
        "--out",
        s(dir.path()),
    ]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("line 2") && err.contains("e.txt"), "{err}");
}

#[test]
fn config_errors_list_every_key() {
    let f = fixture();
    let cfg = f.out("bad.toml");
    fs::write(&cfg, "dropout = 1.5\nnhid1 = 0\nbogus = 1\nlearning_rate = 0.02\n").unwrap();
    let out = bscnets(&[
        "train",
        "--data",
        s(&f.data),
        "--config",
        s(&cfg),
        "--out",
        s(&f.out("o")),
    ]);
    assert!(!out.status.success());
    let err = stderr(&out);
    for key in ["dropout", "nhid1", "bogus", "learning_rate"] {
        assert!(err.contains(key), "{key} missing from {err}");
    }
}

#[test]
fn train_is_deterministic_and_eval_reproduces_run_zero() {
    let f = fixture();
    let (a, b) = (f.out("a"), f.out("b"));
    for out in [&a, &b] {
        ok(&["train", "--data", s(&f.data), "--config", s(&f.config), "--out", s(out)]);
    }
    let ra = fs::read(a.join("report.json")).unwrap();
    assert_eq!(ra, fs::read(b.join("report.json")).unwrap());
    let report: Value = serde_json::from_slice(&ra).unwrap();
    assert_eq!(report["per_run"].as_array().unwrap().len(), 2);
    assert!(!String::from_utf8_lossy(&ra).contains("seconds"));

    let manifest = json(&a.join("manifest.json"));
    assert_eq!(manifest["seeds"]["runs"].as_array().unwrap().len(), 2);
    assert!(manifest["timings"]["total_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 3);

    let e = f.out("e");
    ok(&[
        "eval",
        "--data",
        s(&f.data),
        "--config",
        s(&f.config),
        "--checkpoint",
        s(&a.join("model.ckpt")),
        "--out",
        s(&e),
    ]);
    let eval = json(&e.join("report.json"));
    assert_eq!(eval["test_auc"], report["per_run"][0]["auc"]);

    let more = f.out("c");
    ok(&[
        "train",
        "--data",
        s(&f.data),
        "--config",
        s(&f.config),
        "--runs",
        "3",
        "--seed",
        "9",
        "--out",
        s(&more),
    ]);
    let r = json(&more.join("report.json"));
    assert_eq!(r["per_run"].as_array().unwrap().len(), 3);
    assert_eq!(r["config"]["train"]["seed"], 9);
}

#[test]
fn eval_rejects_corrupt_checkpoint() {
    let f = fixture();
    let ckpt = f.out("broken.ckpt");
    fs::write(&ckpt, b"not a checkpoint").unwrap();
    let out = bscnets(&[
        "eval",
        "--data",
        s(&f.data),
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&f.out("e")),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("broken.ckpt"));
}

#[test]
fn ablate_reports_all_variants() {
    let f = fixture();
    let out = f.out("abl");
    ok(&[
        "ablate",
        "--data",
        s(&f.data),
        "--config",
        s(&f.config),
        "--runs",
        "2",
        "--out",
        s(&out),
    ]);
    let report = json(&out.join("report.json"));
    let mut keys: Vec<&str> = report["ablation"]
        .as_object()
        .unwrap()
        .keys()
        .map(String::as_str)
        .collect();
    keys.sort();
    assert_eq!(keys, ["full", "no_random_walk", "no_relation", "only_L1"]);
    assert!(report["ablation"]["only_L1"]["p_value_full_greater"].is_number());
}

#[test]
fn grid_reports_best_cell() {
    let f = fixture();
    let grid = f.out("grid.json");
    fs::write(
        &grid,
        r#"{"nhid1": [8], "nhid2": [16], "nhid3": [4], "learning_rate": [0.01, 0.05], "dropout": [0.5], "r": [2], "pi_alpha": [1.0], "pi_beta": [1.0]}"#,
    )
    .unwrap();
    let out = f.out("g");
    ok(&[
        "grid",
        "--data",
        s(&f.data),
        "--config",
        s(&f.config),
        "--grid",
        s(&grid),
        "--out",
        s(&out),
    ]);
    let report = json(&out.join("report.json"));
    assert_eq!(report["cells"].as_array().unwrap().len(), 2);
    assert!(report["best"].as_u64().unwrap() < 2);

    fs::write(&grid, r#"{"widths": [1]}"#).unwrap();
    let bad = bscnets(&["grid", "--data", s(&f.data), "--grid", s(&grid), "--out", s(&out)]);
    assert!(!bad.status.success());
    assert!(stderr(&bad).contains("widths"));
}

#[test]
fn epidemic_with_oracle_scorer_reproduces_base_curve() {
    let f = fixture();
    let scores = f.out("oracle.txt");
    let edges = fs::read_to_string(f.data.join("edges.txt")).unwrap();
    let lines: String = edges.lines().map(|l| format!("{l} 1\n")).collect();
    fs::write(&scores, lines).unwrap();
    let out = f.out("epi");
    ok(&[
        "epidemic",
        "--data",
        s(&f.data),
        "--config",
        s(&f.config),
        "--perturb",
        "0",
        "--strategy",
        "none",
        "--scorer-file",
        s(&scores),
        "--trials",
        "50",
        "--out",
        s(&out),
    ]);
    let base = fs::read_to_string(out.join("curves_base.csv")).unwrap();
    assert_eq!(base, fs::read_to_string(out.join("curves_external.csv")).unwrap());
    assert_eq!(base.lines().count(), 181);
    assert_eq!(
        fs::read_to_string(out.join("curves_model.csv"))
            .unwrap()
            .lines()
            .count(),
        181
    );
    let report = json(&out.join("report.json"));
    assert_eq!(report["external"]["l1_distance"], 0.0);
    assert_eq!(report["external_label"], "score_file");
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["seeds"]["trials"].as_array().unwrap().len(), 50);
}

#[test]
fn epidemic_rejects_unknown_strategy_and_bad_threads() {
    let f = fixture();
    let out = bscnets(&[
        "epidemic",
        "--data",
        s(&f.data),
        "--strategy",
        "random",
        "--out",
        s(&f.out("x")),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("random"));

    let out = Command::new(env!("CARGO_BIN_EXE_bscnets"))
        .args(["train", "--data", s(&f.data), "--out", s(&f.out("y"))])
        .env("BSCNETS_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(stderr(&out).contains("BSCNETS_THREADS"));
}
