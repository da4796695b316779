use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn ttd(args: &[&str], runs: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ttd"))
        .args(args)
        .env("TTD_RUNS_DIR", runs)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json_lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

struct Trained {
    _dir: tempfile::TempDir,
    root: PathBuf,
    data: PathBuf,
    run: PathBuf,
}

/// Small dataset plus a briefly trained checkpoint.
fn trained() -> Trained {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let data = root.join("days.jsonl");
    let out = ttd(&["gen-data", "--users", "6", "--days", "10", "--features", "12", "--seed", "3", "--out", s(&data)], &root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = root.join("run");
    let out = ttd(&["train", "--data", s(&data), "--epochs", "3", "--batch-size", "8", "--out", s(&run)], &root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    Trained { _dir: dir, root, data, run }
}

#[test]
fn gen_data_counts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for p in [&a, &b] {
        let out = ttd(&["gen-data", "--users", "10", "--days", "42", "--seed", "7", "--features", "8", "--out", s(p)], dir.path());
        assert_eq!(out.status.code(), Some(0));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 420);
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert!(dir.path().join("a.jsonl.manifest.json").exists());
}

#[test]
fn usage_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ttd(&["gen-data", "--users", "3"], dir.path()).status.code(), Some(2));
    assert_eq!(ttd(&["no-such-command"], dir.path()).status.code(), Some(2));
    let p = dir.path().join("x.jsonl");
    let bad = ttd(&["gen-data", "--users", "0", "--out", s(&p)], dir.path());
    assert_eq!(bad.status.code(), Some(2));
    let missing = ttd(&["eval", "--checkpoint", "nope.json", "--data", "nope.jsonl"], dir.path());
    assert_eq!(missing.status.code(), Some(4));
}

#[test]
fn train_writes_artifacts_and_manifest() {
    let t = trained();
    for f in ["checkpoint.json", "history.csv", "config.toml", "manifest.json"] {
        assert!(t.run.join(f).exists(), "missing {f}");
    }
    let history = std::fs::read_to_string(t.run.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_loss,val_loss\n"));
    assert_eq!(history.lines().count(), 4);
    let manifest: Value = serde_json::from_slice(&std::fs::read(t.run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seeds"]["train"], 42);
    assert_eq!(manifest["config"]["model"]["input_dim"], 12);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 3);
    let snapshot = std::fs::read_to_string(t.run.join("config.toml")).unwrap();
    assert!(snapshot.contains("max_epochs = 3"));

    // same flags, same bytes; another seed, another history
    let again = t.root.join("again");
    ttd(&["train", "--data", s(&t.data), "--epochs", "3", "--batch-size", "8", "--out", s(&again)], &t.root);
    assert_eq!(std::fs::read(t.run.join("checkpoint.json")).unwrap(), std::fs::read(again.join("checkpoint.json")).unwrap());
    let other = t.root.join("other");
    ttd(&["train", "--data", s(&t.data), "--epochs", "3", "--batch-size", "8", "--seed", "43", "--out", s(&other)], &t.root);
    assert_ne!(history, std::fs::read_to_string(other.join("history.csv")).unwrap());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let t = trained();
    let cfg = t.root.join("cfg.toml");
    std::fs::write(&cfg, "[model]\nd_model = 16\nnum_layers = 1\n\n[train]\nmax_epochs = 9\npatience = 2\nlr = 0.002\n").unwrap();
    let run = t.root.join("merged");
    let out = ttd(&["train", "--data", s(&t.data), "--config", s(&cfg), "--epochs", "2", "--out", s(&run)], &t.root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let snap: Value = serde_json::from_slice(&std::fs::read(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(snap["config"]["model"]["d_model"], 16);
    assert_eq!(snap["config"]["train"]["max_epochs"], 2);
    assert_eq!(snap["config"]["train"]["lr"], 0.002);
    std::fs::write(&cfg, "[train]\nno_such_key = 1\n").unwrap();
    let bad = ttd(&["train", "--data", s(&t.data), "--config", s(&cfg)], &t.root);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn default_run_dir_honours_environment() {
    let t = trained();
    let out = ttd(&["train", "--data", s(&t.data), "--epochs", "1"], &t.root);
    assert!(out.status.success());
    let summary = &json_lines(&out)[0];
    let dir = PathBuf::from(summary["run_dir"].as_str().unwrap());
    assert!(dir.starts_with(&t.root));
    assert!(dir.file_name().unwrap().to_str().unwrap().starts_with("train-"));
}

#[test]
fn resume_restores_optimizer_state() {
    let t = trained();
    let resumed = t.root.join("resumed");
    let out = ttd(
        &["train", "--data", s(&t.data), "--resume", s(&t.run.join("checkpoint.json")), "--epochs", "1", "--out", s(&resumed)],
        &t.root,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let before: Value = serde_json::from_slice(&std::fs::read(t.run.join("checkpoint.json")).unwrap()).unwrap();
    let after: Value = serde_json::from_slice(&std::fs::read(resumed.join("checkpoint.json")).unwrap()).unwrap();
    let steps = |v: &Value| v["optimizer"]["step"].as_u64().unwrap();
    // 6 users split 4/1/1 with 10 days each: 40 train days, batches of 64 by default
    assert_eq!(steps(&after), steps(&before) + 1);
    assert_eq!(before["split"], after["split"]);
    assert_eq!(before["norm_stats"], after["norm_stats"]);
}

#[test]
fn eval_reports_thresholds_and_baseline() {
    let t = trained();
    let ck = t.run.join("checkpoint.json");
    let out_dir = t.root.join("eval");
    let out = ttd(
        &["eval", "--checkpoint", s(&ck), "--data", s(&t.data), "--threshold", "0.05,0.10,0.15,0.20", "--out", s(&out_dir), "--run-id", "r1", "--kde"],
        &t.root,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = json_lines(&out);
    assert_eq!(lines.len(), 4);
    assert!(out_dir.join("r1_ttd_p0.10.json").exists());
    assert!(out_dir.join("r1_ttd_p0.10.csv").exists());
    assert!(out_dir.join("r1_ttd_p0.10_kde_predicted.csv").exists());

    let default = ttd(&["eval", "--checkpoint", s(&ck), "--data", s(&t.data), "--out", s(&out_dir), "--format", "json"], &t.root);
    assert_eq!(json_lines(&default)[0]["threshold"], 0.1);

    let base = ttd(&["eval", "--checkpoint", s(&ck), "--data", s(&t.data), "--baseline", "mlr", "--out", s(&out_dir), "--run-id", "r1"], &t.root);
    assert!(base.status.success(), "{}", String::from_utf8_lossy(&base.stderr));
    let row = &json_lines(&base)[0];
    assert_eq!(row["predictor"], "mlr");
    assert!(row["threshold"].is_null());
    assert!(out_dir.join("r1_mlr.json").exists());
}

#[test]
fn stream_emits_events_and_exit_codes() {
    let t = trained();
    let ck = t.run.join("checkpoint.json");
    let out = ttd(&["stream", "--checkpoint", s(&ck), "--sequence", s(&t.data), "--index", "3", "--emit-curve"], &t.root);
    let code = out.status.code().unwrap();
    assert!(code == 0 || code == 3, "{}", String::from_utf8_lossy(&out.stderr));
    let events = json_lines(&out);
    assert_eq!(events[0]["event"], "start");
    assert_eq!(events.last().unwrap()["event"], "end");
    let detections = events.iter().filter(|e| e["event"] == "detection").count();
    assert!(detections <= 1);
    assert_eq!(code == 0, detections == 1);
    assert!(events.iter().any(|e| e["event"] == "step"));

    // a threshold no survival value can fall under never detects
    let never = ttd(&["stream", "--checkpoint", s(&ck), "--sequence", s(&t.data), "--threshold", "1e-12"], &t.root);
    assert_eq!(never.status.code(), Some(3));
    let end = json_lines(&never).pop().unwrap();
    assert_eq!(end["detected"], false);
    assert_eq!(end["predicted_index"], 264);
    let bad = ttd(&["stream", "--checkpoint", s(&ck), "--sequence", s(&t.data), "--threshold", "1.5"], &t.root);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn finetune_changes_only_unfrozen_tensors() {
    let t = trained();
    let ck = t.run.join("checkpoint.json");
    let out_dir = t.root.join("ft");
    let out = ttd(
        &["finetune", "--checkpoint", s(&ck), "--data", s(&t.data), "--user", "u0", "--holdout-days", "2", "--epochs", "2", "--out", s(&out_dir)],
        &t.root,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let base: Value = serde_json::from_slice(&std::fs::read(&ck).unwrap()).unwrap();
    let tuned: Value = serde_json::from_slice(&std::fs::read(out_dir.join("checkpoint.json")).unwrap()).unwrap();
    let last = base["config"]["num_layers"].as_u64().unwrap() - 1;
    let mut changed = 0;
    for (a, b) in base["params"].as_array().unwrap().iter().zip(tuned["params"].as_array().unwrap()) {
        let name = a["name"].as_str().unwrap();
        if a["data"] != b["data"] {
            changed += 1;
            assert!(name.starts_with(&format!("encoder.{last}.")) || name.starts_with("head."), "{name} changed");
        }
    }
    assert!(changed > 0);
    let summary = &json_lines(&out)[0];
    assert_eq!(summary["adapt_days"], 8);
    assert_eq!(summary["holdout"]["days"], 2);
    let unknown = ttd(&["finetune", "--checkpoint", s(&ck), "--data", s(&t.data), "--user", "nobody"], &t.root);
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn sweep_writes_three_axis_grid() {
    let t = trained();
    let out_dir = t.root.join("sweep");
    let out = ttd(
        &["sweep", "--data", s(&t.data), "--omega-e", "1,1.5", "--omega-w", "1.5", "--thresholds", "0.1,0.2", "--epochs", "1", "--out", s(&out_dir)],
        &t.root,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    assert!(csv.starts_with("omega_e,omega_w,threshold,mae_all"));
    assert!(out_dir.join("manifest.json").exists());
}

#[test]
fn attribute_reports_top_features_at_two_steps() {
    let t = trained();
    let ck = t.run.join("checkpoint.json");
    let out = ttd(
        &["attribute", "--checkpoint", s(&ck), "--sequence", s(&t.data), "--index", "0", "--at", "20", "--steps", "20"],
        &t.root,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["at_detection"]["t"], 20);
    assert_eq!(report["before_detection"]["t"], 19);
    assert_eq!(report["at_detection"]["top"].as_array().unwrap().len(), 10);
}
