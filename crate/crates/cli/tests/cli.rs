use std::fs;
use std::path::Path;
use std::process::Command;

use vireid_lab::triplet::batch_all_loss;
use vireid_lab::{LossResult, MiniBatch, TripletParams};
use vireid_lab_cli::{run_experiment, run_selftest, ExperimentConfig, Kernels};

const SMALL: &str = r#"{
  "synthetic": {"identities": 6, "samples_per_modality": 3, "dim": 8},
  "train": {"spec": {"p": 3, "k": 2}, "epochs": 3, "warmup_epochs": 1},
  "grid": [["batch_hard", "batch_all"], ["softmax", "cosine_softmax"]],
  "eval": {"trials": 3},
  "output_dir": "unused"
}"#;

fn small_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_json(SMALL).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vireid-lab"))
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                files.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn two_by_two_grid_writes_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cells = run_experiment(&small_config(dir.path())).unwrap();
    assert_eq!(cells.len(), 4);
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "cell,losses,rank1,rank10,map");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("0,batch_hard+softmax,"));
    assert!(lines[4].starts_with("3,batch_all+cosine_softmax,"));
    for line in &lines[1..] {
        for cell in line.split(',').skip(2) {
            let v: f64 = cell.parse().unwrap();
            assert!(v.is_finite() && (0.0..=1.0).contains(&v));
            assert_eq!(cell.split('.').nth(1).unwrap().len(), 6);
        }
    }
    for c in &cells {
        let cell_dir = dir.path().join(c.dir_name());
        let trace = fs::read_to_string(cell_dir.join("trace.csv")).unwrap();
        assert_eq!(trace.lines().count(), 1 + 3 * 3);
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(cell_dir.join("report.json")).unwrap()).unwrap();
        assert_eq!(report["trials"], 3);
        assert_eq!(report["protocol"]["shot"], "single");
        assert!(report["cmc"]["rank20"].as_f64().unwrap() <= 1.0);
    }
}

#[test]
fn runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = small_config(&out);
    run_experiment(&cfg).unwrap();
    let first = read_tree(&out);
    fs::remove_dir_all(&out).unwrap();
    run_experiment(&cfg).unwrap();
    assert_eq!(first.len(), 10);
    assert!(first == read_tree(&out), "artifacts differ between runs");
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"train": {"epochs": 0}, "output_dir": "x"}"#).unwrap();
    let out = bin().arg("--config").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.epochs"));

    let out = bin().arg("--config").arg(dir.path().join("missing.json")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let good = dir.path().join("good.json");
    fs::write(&good, SMALL).unwrap();
    let target = dir.path().join("run");
    let out = bin()
        .arg("--config")
        .arg(&good)
        .arg("--out")
        .arg(&target)
        .args(["--seed", "5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let echoed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(target.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed["train"]["seed"], 5);
    assert_eq!(echoed["synthetic"]["seed"], 5);
}

#[test]
fn numerical_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("huge.json");
    fs::write(
        &cfg,
        r#"{"synthetic": {"identities": 4, "samples_per_modality": 2, "dim": 4, "identity_spread": 1e300},
            "train": {"spec": {"p": 2, "k": 2}, "epochs": 2, "warmup_epochs": 1, "losses": ["batch_all"]},
            "output_dir": "x"}"#,
    )
    .unwrap();
    let out = bin().arg("--config").arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn baseline_config_completes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/baseline.json");
    let out = bin().args(["--config", cfg, "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let name = "00_unified_batch_all+cosine_softmax+ba_hetero_center";
    assert!(dir.path().join(name).join("trace.csv").is_file());
    assert!(dir.path().join(name).join("report.json").is_file());
    assert_eq!(fs::read_to_string(dir.path().join("summary.csv")).unwrap().lines().count(), 2);
}

#[test]
fn shipped_configs_validate() {
    for name in ["baseline", "triplet_grid", "components"] {
        let path = format!("{}/configs/{name}.json", env!("CARGO_MANIFEST_DIR"));
        let cfg = ExperimentConfig::load(Path::new(&path), &Default::default()).unwrap();
        assert!(!cfg.cells().is_empty());
    }
}

fn flipped_batch_all(batch: &MiniBatch, params: &TripletParams) -> vireid_lab::Result<LossResult> {
    let mut r = batch_all_loss(batch, params)?;
    for g in r.embedding_grads.iter_mut().flatten() {
        *g = -*g;
    }
    Ok(r)
}

#[test]
fn selftest_passes_is_deterministic_and_catches_sign_errors() {
    let mut first = Vec::new();
    assert!(run_selftest(&mut first, &Kernels::default()).unwrap());
    let out = bin().arg("--selftest").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let again = bin().arg("--selftest").output().unwrap();
    assert_eq!(out.stdout, again.stdout);
    assert_eq!(out.stdout, first);

    let broken = Kernels {
        batch_all: flipped_batch_all,
        ..Kernels::default()
    };
    let mut text = Vec::new();
    assert!(!run_selftest(&mut text, &broken).unwrap());
    let text = String::from_utf8(text).unwrap();
    assert!(text.lines().any(|l| l.starts_with("FAIL gradient batch_all")));
    assert!(text.lines().any(|l| l.starts_with("PASS oracle batch_all")));
}
