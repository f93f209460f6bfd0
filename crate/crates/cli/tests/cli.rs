mod common;

use std::fs;
use std::path::Path;

use common::{err, ok, small_corpus, snapshot};
use scoreq_core::model::{Checkpoint, EncoderConfig, ModelParams, TrainingMeta};
use serde_json::Value;

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn manifest_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

const FAST: [&str; 4] = ["--batch-size", "32", "--max-epochs", "2"];

fn train(dir: &Path, loss: &str, out: &str, extra: &[&str]) -> String {
    let mut args = vec!["train", "--manifest", "data/manifest.csv", "--loss", loss, "--out", out];
    args.extend_from_slice(&FAST);
    args.extend_from_slice(extra);
    ok(&args, dir)
}

#[test]
fn gen_data_counts_and_holdout() {
    let d = tempfile::tempdir().unwrap();
    let stdout = {
        ok(
            &["gen-data", "--out", "data", "--samples-per-family", "30", "--frames", "6", "--holdout", "C,E"],
            d.path(),
        )
    };
    assert!(stdout.contains("(held out)"));
    let rows = manifest_rows(&d.path().join("data/manifest.csv"));
    assert_eq!(rows.len(), 150);
    for fam in ["C", "E"] {
        assert!(rows.iter().filter(|r| r[2] == fam).all(|r| r[1] == "test"));
    }
    assert!(rows.iter().any(|r| r[2] == "A" && r[1] == "train"));
    for r in &rows {
        assert!(d.path().join("data").join(&r[4]).is_file());
    }
    assert!(d.path().join("data/refs/manifest.csv").is_file());
    assert!(d.path().join("data/severity.csv").is_file());
    assert!(d.path().join("data/corpus.toml").is_file());
}

#[test]
fn gen_data_is_deterministic_and_refuses_overwrite() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    small_corpus(a.path(), &["--seed", "9"]);
    small_corpus(b.path(), &["--seed", "9"]);
    assert_eq!(snapshot(a.path()), snapshot(b.path()));

    let before = snapshot(a.path());
    let (code, e) = err(&["gen-data", "--out", "data"], a.path());
    assert_eq!(code, 2);
    assert_eq!(e["kind"], "exists");
    assert_eq!(snapshot(a.path()), before);

    ok(&["gen-data", "--out", "data", "--samples-per-family", "10", "--frames", "4", "--force"], a.path());
    assert_eq!(manifest_rows(&a.path().join("data/manifest.csv")).len(), 50);
    assert_eq!(fs::read_dir(a.path().join("data/features")).unwrap().count(), 50);
}

#[test]
fn train_writes_run_directories() {
    let d = tempfile::tempdir().unwrap();
    small_corpus(d.path(), &[]);
    train(d.path(), "scoreq_adaptive", "runs/sq", &["--nr"]);
    let run = d.path().join("runs/sq");
    for f in ["config.toml", "metrics.csv", "best.json", "final.json", "summary.json"] {
        assert!(run.join(f).is_file(), "{f}");
        assert!(run.join("nr_head").join(f).is_file() || f == "config.toml", "nr_head/{f}");
    }
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(
        metrics.lines().next().unwrap(),
        "epoch,train_loss,val_criterion,lr_encoder,lr_head,active_triplet_fraction"
    );
    assert_eq!(metrics.lines().count(), 3);
    let encoder = Checkpoint::load(&run.join("best.json")).unwrap();
    let head = Checkpoint::load(&run.join("nr_head/best.json")).unwrap();
    assert!(!encoder.model.config.mos_head);
    assert!(head.model.config.mos_head);

    train(d.path(), "l2", "runs/l2", &[]);
    let l2 = d.path().join("runs/l2");
    assert!(l2.join("best.json").is_file());
    assert!(!l2.join("nr_head").exists());
}

#[test]
fn train_rejects_bad_input_before_writing() {
    let d = tempfile::tempdir().unwrap();
    small_corpus(d.path(), &[]);
    let (code, e) = err(
        &["train", "--manifest", "data/manifest.csv", "--loss", "l2", "--nr", "--out", "r1"],
        d.path(),
    );
    assert_eq!((code, e["kind"].as_str()), (2, Some("usage")));
    let (code, _) = err(
        &["train", "--manifest", "data/manifest.csv", "--lr-encoder=-1", "--out", "r2"],
        d.path(),
    );
    assert_eq!(code, 2);
    let (code, e) = err(&["train", "--manifest", "nope.csv", "--out", "r3"], d.path());
    assert_ne!(code, 0);
    assert!(e["message"].as_str().unwrap().contains("nope.csv"));
    for r in ["r1", "r2", "r3"] {
        assert!(!d.path().join(r).exists());
    }
}

#[test]
fn eval_modes_and_reports() {
    let d = tempfile::tempdir().unwrap();
    small_corpus(d.path(), &[]);
    ok(
        &[
            "train", "--manifest", "data/manifest.csv", "--loss", "l2", "--batch-size", "32", "--max-epochs", "60",
            "--lr-encoder", "1e-3", "--lr-head", "1e-3", "--out", "runs/l2",
        ],
        d.path(),
    );
    let untrained = ModelParams::init(EncoderConfig::default(), 0).unwrap();
    Checkpoint::new(untrained, TrainingMeta::default()).save(&d.path().join("untrained.json")).unwrap();

    let trained: Value = serde_json::from_str(&ok(
        &["eval", "--checkpoint", "runs/l2/best.json", "--manifest", "data/manifest.csv", "--splits", "test"],
        d.path(),
    ))
    .unwrap();
    let baseline: Value = serde_json::from_str(&ok(
        &["eval", "--checkpoint", "untrained.json", "--manifest", "data/manifest.csv", "--splits", "test"],
        d.path(),
    ))
    .unwrap();
    let test = &trained["splits"]["test"];
    let pc = test["overall"]["pc"].as_f64().unwrap();
    assert!(pc > 0.5 && pc > baseline["splits"]["test"]["overall"]["pc"].as_f64().unwrap());
    assert!(test["overall"]["rmse_mapped"].is_number());
    let family_n: u64 = test["per_family"].as_object().unwrap().values().map(|f| f["n"].as_u64().unwrap()).sum();
    assert_eq!(family_n, test["overall"]["n"].as_u64().unwrap());

    let nmr: Value = serde_json::from_str(&ok(
        &["eval", "--checkpoint", "runs/l2/best.json", "--manifest", "data/manifest.csv", "--mode", "nmr"],
        d.path(),
    ))
    .unwrap();
    assert_eq!(nmr["mode"], "nmr");
    for split in nmr["splits"].as_object().unwrap().values() {
        assert!(split["overall"].get("rmse_mapped").is_none_or(Value::is_null));
    }

    train(d.path(), "scoreq_fixed", "runs/sq", &[]);
    let (code, e) = err(
        &["eval", "--checkpoint", "runs/sq/best.json", "--manifest", "data/manifest.csv"],
        d.path(),
    );
    assert_eq!((code, e["kind"].as_str()), (2, Some("usage")));
}

fn write_scores(path: &Path, ids: &[String], scores: &[f64]) {
    let mut s = String::from("id,score\n");
    for (id, v) in ids.iter().zip(scores) {
        s.push_str(&format!("{id},{v}\n"));
    }
    fs::write(path, s).unwrap();
}

#[test]
fn bootstrap_outcomes() {
    let d = tempfile::tempdir().unwrap();
    let ids: Vec<String> = (0..120).map(|i| format!("s{i:03}")).collect();
    let mos: Vec<f64> = (0..120).map(|i| 1.0 + 4.0 * ((i * 37) % 120) as f64 / 120.0).collect();
    let mut mos_csv = String::from("id,mos\n");
    for (id, m) in ids.iter().zip(&mos) {
        mos_csv.push_str(&format!("{id},{m}\n"));
    }
    fs::write(d.path().join("mos.csv"), mos_csv).unwrap();
    let wobble = |i: usize, amp: f64| amp * (((i * 7919) % 97) as f64 / 97.0 - 0.5);
    let good: Vec<f64> = mos.iter().enumerate().map(|(i, m)| m + wobble(i, 0.5)).collect();
    let bad: Vec<f64> = mos.iter().enumerate().map(|(i, m)| m + wobble(i, 4.0)).collect();
    write_scores(&d.path().join("good.csv"), &ids, &good);
    write_scores(&d.path().join("bad.csv"), &ids, &bad);

    let same = ok(
        &["bootstrap", "--mos", "mos.csv", "--pred-a", "good.csv", "--pred-b", "good.csv", "--iterations", "500"],
        d.path(),
    );
    assert!(same.contains("No Diff."), "{same}");

    ok(
        &[
            "bootstrap", "--mos", "mos.csv", "--pred-a", "good.csv", "--pred-b", "bad.csv", "--name-a", "good",
            "--name-b", "bad", "--iterations", "800", "--seed", "4", "--out", "boot.json",
        ],
        d.path(),
    );
    let r = json(&d.path().join("boot.json"));
    assert_eq!(r["outcome"], "good");
    assert!(r["p_value"].as_f64().unwrap() < 0.05);
    assert_eq!(r["iterations"], 800);
    assert_eq!(r["seed"], 4);

    write_scores(&d.path().join("short.csv"), &ids[..100], &good[..100]);
    let (code, e) = err(
        &["bootstrap", "--mos", "mos.csv", "--pred-a", "good.csv", "--pred-b", "short.csv"],
        d.path(),
    );
    assert_eq!(code, 3);
    let details = e["details"].as_array().unwrap();
    assert!(!details.is_empty());
    assert!(details.iter().any(|v| v.as_str().unwrap().contains("s100")));
}

#[test]
fn diagnose_outputs() {
    let d = tempfile::tempdir().unwrap();
    small_corpus(d.path(), &[]);
    train(d.path(), "scoreq_adaptive", "runs/sq", &[]);
    let args = ["diagnose", "--checkpoint", "runs/sq/best.json", "--manifest", "data/manifest.csv"];
    let with = |extra: &[&str]| {
        let mut a = args.to_vec();
        a.extend_from_slice(extra);
        ok(&a, d.path())
    };
    with(&["--out", "proj"]);
    with(&["--out", "proj2"]);
    with(&["--out", "enc", "--layer", "encoder"]);
    let test_n = manifest_rows(&d.path().join("data/manifest.csv")).iter().filter(|r| r[1] == "test").count();
    let csv = fs::read_to_string(d.path().join("proj/embeddings_2d.csv")).unwrap();
    assert_eq!(csv.lines().count(), test_n + 1);
    assert_eq!(
        fs::read(d.path().join("proj/report.json")).unwrap(),
        fs::read(d.path().join("proj2/report.json")).unwrap()
    );
    let proj = json(&d.path().join("proj/report.json"));
    let enc = json(&d.path().join("enc/report.json"));
    assert_eq!(proj["layer"], "projection");
    assert_eq!(enc["layer"], "encoder");
    assert_ne!(proj["points"], enc["points"]);
}

#[test]
fn bench_reports_counts() {
    let d = tempfile::tempdir().unwrap();
    let table = ok(&["bench", "--batch-sizes", "16,32", "--out", "bench.json"], d.path());
    assert!(table.contains("ratio"));
    let r = json(&d.path().join("bench.json"));
    let rows = r["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for row in rows {
        assert!(row["ratio"].as_f64().unwrap() > 0.0);
        assert!(row["scoreq"]["reps"].as_u64().unwrap() >= 20);
        assert!(row["scoreq"]["valid_triplets"].as_u64().unwrap() > 0);
    }
    let (code, _) = err(&["bench", "--reps", "3"], d.path());
    assert_eq!(code, 2);
}

#[test]
fn errors_are_json_on_stderr() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("bad.toml"), "seed = [").unwrap();
    let (code, e) = err(&["gen-data", "--config", "bad.toml"], d.path());
    assert_eq!((code, e["kind"].as_str()), (2, Some("config")));
    fs::write(d.path().join("unknown.toml"), "no_such_field = 1\n").unwrap();
    let (code, _) = err(&["train", "--config", "unknown.toml"], d.path());
    assert_eq!(code, 2);
    let (code, e) = err(&["eval", "--manifest", "m.csv"], d.path());
    assert_eq!(code, 2);
    assert!(e["message"].as_str().unwrap().contains("checkpoint"));
}
