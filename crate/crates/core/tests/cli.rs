use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[network]
rows = 2
cols = 2
segment_cells = 8

[simulation]
horizon_s = 400
warmup_s = 100

[optimize]
iterations = 8
population = 16
runs_per_config = 1
best_k = 2
random_k = 1
"#;

fn sigsurr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sigsurr")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = sigsurr(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn lines(p: &Path) -> usize {
    std::fs::read_to_string(p).unwrap().lines().count()
}

fn setup(dir: &Path) -> (String, String) {
    let cfg = dir.join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let spec = dir.join("gbt.toml");
    std::fs::write(&spec, "num_trees = 20\nnum_leaves = 7\nmin_samples_leaf = 5\n").unwrap();
    (cfg.display().to_string(), spec.display().to_string())
}

#[test]
fn dataset_split_sizes_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, _) = setup(dir.path());
    let out = dir.path().join("d");
    let o = out.to_str().unwrap();
    ok(&["dataset", "--config", &cfg, "--out", o, "--n", "200", "--train-n", "160"]);
    assert_eq!(lines(&out.join("train.txt")), 160);
    assert_eq!(lines(&out.join("test.txt")), 40);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    for a in manifest["commands"]["dataset"]["artifacts"].as_array().unwrap() {
        assert!(out.join(a.as_str().unwrap()).exists());
    }

    let bad = sigsurr(&["dataset", "--config", &cfg, "--out", o, "--n", "200", "--train-n", "300"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("train-n"));
}

#[test]
fn user_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, _) = setup(dir.path());
    let o = dir.path().join("x").display().to_string();
    let missing = sigsurr(&["train", "--config", &cfg, "--out", &o, "--kind", "gbt", "--train", "/nonexistent/train.txt"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/train.txt"));

    let zero = sigsurr(&["optimize", "--config", &cfg, "--out", &o, "--oracle", "--runs-per-config", "0"]);
    assert_eq!(zero.status.code(), Some(1));

    let what = sigsurr(&["analyze", "--out", &o, "--what", "nonsense", "--logs", &o]);
    assert_eq!(what.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&what.stderr).contains("Usage"));

    let strategy = sigsurr(&["mitigate", "--out", &o, "--strategy", "magic"]);
    assert_eq!(strategy.status.code(), Some(1));

    let bad_cfg = dir.path().join("bad.toml");
    std::fs::write(&bad_cfg, "[network]\nrows = 2\nbogus = 1\n").unwrap();
    let r = sigsurr(&["dataset", "--config", bad_cfg.to_str().unwrap(), "--out", &o, "--n", "10"]);
    assert_eq!(r.status.code(), Some(1));
}

/// Runs every command once into `out`.
fn pipeline(cfg: &str, spec: &str, out: &Path) {
    let o = out.to_str().unwrap();
    let p = |rel: &str| out.join(rel).display().to_string();
    ok(&["dataset", "--config", cfg, "--out", o, "--n", "150", "--train-n", "120"]);
    ok(&["train", "--config", cfg, "--out", o, "--kind", "gbt", "--spec", spec, "--train", &p("train.txt"), "--test", &p("test.txt")]);
    ok(&["optimize", "--config", cfg, "--out", o, "--model", &p("models/gbt-l2-7.json"), "--ga-grid"]);
    ok(&["optimize", "--config", cfg, "--out", o, "--oracle", "--iterations", "4", "--population", "8"]);
    ok(&["analyze", "--config", cfg, "--out", o, "--what", "errors", "--logs", &p("logs/gbt-l2-7"), "--model", &p("models/gbt-l2-7.json"), "--test", &p("test.txt")]);
    ok(&["analyze", "--config", cfg, "--out", o, "--what", "trajectories", "--logs", &p("logs/gbt-l2-7")]);
    ok(&["analyze", "--config", cfg, "--out", o, "--what", "pca", "--logs", &p("logs/gbt-l2-7"), "--logs", &p("logs/oracle"), "--encoded"]);
    ok(&["mitigate", "--config", cfg, "--out", o, "--strategy", "ensemble", "--models", &p("models/gbt-l2-7.json"), "--test", &p("test.txt")]);
    ok(&["mitigate", "--config", cfg, "--out", o, "--strategy", "active", "--spec", &dir_spec(out), "--train", &p("train.txt"), "--test", &p("test.txt"), "--rounds", "2", "--top-k", "10", "--iterations", "5"]);
}

fn dir_spec(out: &Path) -> String {
    let p = out.join("active.toml");
    std::fs::write(&p, "family = \"gbt\"\nnum_trees = 10\nmin_samples_leaf = 5\n").unwrap();
    p.display().to_string()
}

fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn full_pipeline_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, spec) = setup(dir.path());
    let out = dir.path().join("run");
    pipeline(&cfg, &spec, &out);
    let first = snapshot(&out);
    // 20 grid logs plus the summary for the model run.
    let grid_logs = first.iter().filter(|(p, _)| p.starts_with("logs/gbt-l2-7/") && p.ends_with(".jsonl")).count();
    assert_eq!(grid_logs, 20);
    for name in ["errors.json", "errors.svg", "optima.csv", "trajectories.json", "trajectories.csv"] {
        assert!(first.iter().any(|(p, _)| p == &format!("analysis/gbt-l2-7-{name}")), "{name}");
    }
    assert!(first.iter().any(|(p, _)| p == "analysis/pca.svg"));

    let report: sigsurr::cli::ErrorsReport =
        serde_json::from_slice(&std::fs::read(out.join("analysis/gbt-l2-7-errors.json")).unwrap()).unwrap();
    assert_eq!(report.summary.n, 300);
    assert_eq!(report.per_run.len(), 3);

    let manifest: sigsurr::cli::RunManifest =
        serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    for entry in manifest.commands.values() {
        for a in &entry.artifacts {
            assert!(out.join(a).exists(), "{a}");
        }
    }

    pipeline(&cfg, &spec, &out);
    let second = snapshot(&out);
    assert_eq!(first.len(), second.len());
    for ((pa, a), (pb, b)) in first.iter().zip(&second) {
        assert_eq!(pa, pb);
        assert!(a == b, "{pa} differs between reruns");
    }
}

#[test]
fn optimize_logs_are_elitist() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, _) = setup(dir.path());
    let out = dir.path().join("o");
    ok(&["optimize", "--config", &cfg, "--out", out.to_str().unwrap(), "--oracle", "--runs-per-config", "2", "--iterations", "5", "--population", "10"]);
    let logs = sigsurr::cli::load_logs(&out.join("logs/oracle")).unwrap();
    assert_eq!(logs.len(), 2);
    assert!(logs.iter().all(|(_, l)| l.is_elitist_monotone()));
}
