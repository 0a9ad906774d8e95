use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn gmc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmc"))
        .args(args)
        .current_dir(dir)
        .env_remove("GMC_SEED")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "exit {:?}\n{}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn jsonl(text: &str) -> Vec<Value> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

/// A short schedule so CLI tests stay fast.
fn quick_config(dir: &Path) -> PathBuf {
    let p = dir.join("quick.json");
    fs::write(&p, r#"{"warmup_steps": 6, "total_steps": 12, "batch_size": 8, "feature_dim": 8, "attn_dim": 4, "mlp_dim": 8, "log_every": 2, "eval_batches": 2}"#).unwrap();
    p
}

#[test]
fn ingest_reports_corpus_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let out = gmc(dir.path(), &["ingest", "--dataset", path(&fixture("toy.jsonl"))]);
    let summary: Value = serde_json::from_str(&ok(&out)).unwrap();
    assert_eq!(summary["videos"], 12);
    assert_eq!(summary["captions"], 60);
    assert_eq!(summary["ngram_types"].as_array().unwrap().len(), 4);
    assert!(dir.path().join("run_manifest.json").exists());
}

#[test]
fn bad_dataset_line_exits_one_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.jsonl");
    fs::write(&data, "{\"video_id\": \"a\", \"captions\": [\"x\"]}\n{\"video_id\": \"b\"}\n").unwrap();
    let out = gmc(dir.path(), &["ingest", "--dataset", path(&data)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.jsonl:2:"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gmc(dir.path(), &["hist", "--bogus"]).status.code(), Some(1));
    assert_eq!(gmc(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(gmc(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn hist_writes_rank_frequency_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("hist.csv");
    ok(&gmc(dir.path(), &["hist", "--dataset", path(&fixture("zipf_1000.jsonl")), "--out", path(&csv)]));
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("rank,frequency"));
    let rows: Vec<(usize, usize)> = lines
        .map(|l| {
            let (r, f) = l.split_once(',').unwrap();
            (r.parse().unwrap(), f.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.iter().map(|r| r.1).sum::<usize>(), 1000);
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), (1..=rows.len()).collect::<Vec<_>>());
    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("hist.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "hist");
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn score_bias_emits_one_row_per_caption() {
    let dir = tempfile::tempdir().unwrap();
    let rows = jsonl(&ok(&gmc(dir.path(), &["score-bias", "--dataset", path(&fixture("toy.jsonl"))])));
    assert_eq!(rows.len(), 60);
    for r in &rows {
        for key in ["video_id", "caption_index", "sentence_score", "video_score", "sentence_bucket", "video_bucket"] {
            assert!(r.get(key).is_some(), "missing {key} in {r}");
        }
        let s = r["sentence_score"].as_f64().unwrap();
        assert_eq!(r["sentence_bucket"].as_i64().unwrap(), (s * 100.0).round() as i64);
        let v = r["video_score"].as_f64().unwrap();
        assert_eq!(r["video_bucket"].as_i64().unwrap(), (v * 10.0).round() as i64);
    }
}

#[test]
fn equal_manifests_mean_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&gmc(dir.path(), &["score-bias", "--dataset", path(&fixture("toy.jsonl")), "--out", path(&out)]));
        let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.path().join(format!("{name}.manifest.json"))).unwrap()).unwrap();
        (fs::read(&out).unwrap(), manifest)
    };
    let (a, ma) = run("a.jsonl");
    let (b, mb) = run("b.jsonl");
    assert_eq!(a, b);
    // manifests differ only by the output path recorded in the arguments
    assert_eq!(ma["inputs"], mb["inputs"]);
    assert_eq!(ma["tool_version"], mb["tool_version"]);
}

#[test]
fn eval_metrics_scores_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let cands = dir.path().join("cands.jsonl");
    fs::write(
        &cands,
        "{\"video_id\": \"v01\", \"caption\": \"a dog is running\"}\n{\"video_id\": \"v02\", \"caption\": \"a cat sleeps\"}\n",
    )
    .unwrap();
    let rows = jsonl(&ok(&gmc(dir.path(), &["eval-metrics", "--dataset", path(&fixture("toy.jsonl")), "--candidates", path(&cands)])));
    assert_eq!(rows.len(), 2);
    assert!((rows[0]["bleu"]["1"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(rows[0]["cider"].as_f64().unwrap() > rows[1]["cider"].as_f64().unwrap());
    assert!(rows[0]["rouge_l"].as_f64().unwrap() > 0.99);

    fs::write(&cands, "{\"video_id\": \"nope\", \"caption\": \"x\"}\n").unwrap();
    let out = gmc(dir.path(), &["eval-metrics", "--dataset", path(&fixture("toy.jsonl")), "--candidates", path(&cands)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gradcheck_passes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = gmc(dir.path(), &["gradcheck", "--loss", "gmc", "--seed", "7"]);
    let rows = jsonl(&ok(&out));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["loss"], "gmc");
    assert_eq!(rows[0]["seed"], 7);
    assert_eq!(rows[0]["pass"], true);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn seed_variable_overrides_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gmc"))
        .args(["gradcheck", "--loss", "b", "--seed", "7"])
        .current_dir(dir.path())
        .env("GMC_SEED", "3")
        .output()
        .unwrap();
    let rows = jsonl(&ok(&out));
    assert_eq!(rows[0]["seed"], 3);

    let bad = Command::new(env!("CARGO_BIN_EXE_gmc"))
        .args(["gradcheck", "--loss", "b"])
        .current_dir(dir.path())
        .env("GMC_SEED", "minus one")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn train_writes_artifacts_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick_config(dir.path());
    let run_dir = dir.path().join("run");
    let stdout = ok(&gmc(
        dir.path(),
        &["train", "--config", path(&config), "--dataset", path(&fixture("toy.jsonl")), "--out", path(&run_dir)],
    ));
    let summary: Value = serde_json::from_str(&stdout).unwrap();
    assert!(summary["initial"]["l_gmc"].as_f64().is_some());
    for f in ["log.jsonl", "checkpoint.json", "summary.json", "manifest.json"] {
        assert!(run_dir.join(f).exists(), "{f} missing");
    }
    let log = jsonl(&fs::read_to_string(run_dir.join("log.jsonl")).unwrap());
    assert_eq!(log.first().unwrap()["phase"], "warmup");
    assert_eq!(log.last().unwrap()["phase"], "full");
    assert_eq!(log.last().unwrap()["step"], 11);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "train");
    assert_eq!(manifest["config"]["total_steps"], 12);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);

    // resuming a finished run is a no-op that reproduces the checkpoint
    let again = dir.path().join("again");
    ok(&gmc(
        dir.path(),
        &["train", "--resume", path(&run_dir.join("checkpoint.json")), "--dataset", path(&fixture("toy.jsonl")), "--out", path(&again)],
    ));
    assert_eq!(fs::read(run_dir.join("checkpoint.json")).unwrap(), fs::read(again.join("checkpoint.json")).unwrap());

    // a different seed through the environment changes the run
    let seeded = dir.path().join("seeded");
    let out = Command::new(env!("CARGO_BIN_EXE_gmc"))
        .args(["train", "--config", path(&config), "--dataset", path(&fixture("toy.jsonl")), "--out", path(&seeded)])
        .current_dir(dir.path())
        .env("GMC_SEED", "5")
        .output()
        .unwrap();
    ok(&out);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(seeded.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_ne!(fs::read(run_dir.join("checkpoint.json")).unwrap(), fs::read(seeded.join("checkpoint.json")).unwrap());
}

#[test]
fn train_rejects_invalid_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    fs::write(&config, r#"{"warmup_steps": 10, "total_steps": 5}"#).unwrap();
    let out = gmc(
        dir.path(),
        &["train", "--config", path(&config), "--dataset", path(&fixture("toy.jsonl")), "--out", path(&dir.path().join("r"))],
    );
    assert_eq!(out.status.code(), Some(1));
    fs::write(&config, r#"{"warmup_stepz": 10}"#).unwrap();
    let out = gmc(
        dir.path(),
        &["train", "--config", path(&config), "--dataset", path(&fixture("toy.jsonl")), "--out", path(&dir.path().join("r"))],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ablate_reports_four_configurations() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick_config(dir.path());
    let out = dir.path().join("ablate.jsonl");
    ok(&gmc(
        dir.path(),
        &["ablate", "--config", path(&config), "--dataset", path(&fixture("toy.jsonl")), "--out", path(&out)],
    ));
    let rows = jsonl(&fs::read_to_string(&out).unwrap());
    let labels: Vec<&str> = rows.iter().map(|r| r["label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["baseline", "+mcl+b", "+bfcl", "full"]);
    assert!(dir.path().join("ablate.jsonl.manifest.json").exists());
}

#[test]
fn synth_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    ok(&gmc(dir.path(), &["synth", "--out", path(&a), "--videos", "5", "--captions", "4", "--seed", "2"]));
    ok(&gmc(dir.path(), &["synth", "--out", path(&b), "--videos", "5", "--captions", "4", "--seed", "2"]));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(jsonl(&fs::read_to_string(&a).unwrap()).len(), 5);
}
