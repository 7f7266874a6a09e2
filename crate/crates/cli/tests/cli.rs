use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use topicstream::checkpoint::{load_checkpoint, Checkpoint};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_topicstream"));
    c.env_remove("TM_SEED");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn synth(dir: &Path, n: usize) {
    ok(dir, &["synth", "--kind", "static", "--docs", &n.to_string(), "--out-corpus", "c.jsonl", "--out-vocab", "v.txt"]);
}

fn train(dir: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--corpus", "c.jsonl", "--vocab", "v.txt"];
    args.extend_from_slice(extra);
    ok(dir, &args);
}

fn tsv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split('\t').map(String::from).collect()).collect()
}

#[test]
fn reuters_fixture_ingests_to_three_records_and_reruns_identically() {
    let dir = TempDir::new().unwrap();
    let input = fixture("reuters_sample.sgm");
    let input = input.to_str().unwrap();
    let stdout = ok(dir.path(), &["ingest", "--input", input, "--format", "reuters", "--out-corpus", "a.jsonl", "--out-vocab", "a.txt"]);
    assert!(stdout.contains("documents\t3"), "{stdout}");
    assert_eq!(fs::read_to_string(dir.path().join("a.jsonl")).unwrap().lines().count(), 3);
    ok(dir.path(), &["ingest", "--input", input, "--format", "reuters", "--out-corpus", "b.jsonl", "--out-vocab", "b.txt"]);
    assert_eq!(fs::read(dir.path().join("a.jsonl")).unwrap(), fs::read(dir.path().join("b.jsonl")).unwrap());
    assert_eq!(fs::read(dir.path().join("a.txt")).unwrap(), fs::read(dir.path().join("b.txt")).unwrap());
}

#[test]
fn bbc_fixture_keeps_related_links() {
    let dir = TempDir::new().unwrap();
    let input = fixture("bbc_sample.txt");
    ok(dir.path(), &["ingest", "--input", input.to_str().unwrap(), "--format", "bbc", "--out-corpus", "c.jsonl", "--out-vocab", "v.txt"]);
    let text = fs::read_to_string(dir.path().join("c.jsonl")).unwrap();
    let recs: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let related: Vec<usize> = recs.iter().map(|r| r["related"].as_array().unwrap().len()).collect();
    assert_eq!(related, [2, 0, 1]);
    assert_eq!(recs[0]["ts"].as_f64().unwrap(), 1281369113.0);
}

#[test]
fn ingest_of_missing_file_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["ingest", "--input", "nope.sgm", "--format", "reuters", "--out-corpus", "c", "--out-vocab", "v"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ohdp_batch_one_scores_every_document_deterministically() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), 200);
    train(dir.path(), &["--model", "ohdp", "--batch-size", "1", "--checkpoint", "a.json", "--output", "a.tsv"]);
    train(dir.path(), &["--model", "ohdp", "--batch-size", "1", "--checkpoint", "b.json", "--output", "b.tsv"]);
    let rows = tsv_rows(&dir.path().join("a.tsv"));
    assert_eq!(rows.len(), 200);
    assert!(rows.iter().all(|r| r.len() == 4 && r[2].parse::<f64>().unwrap().is_finite()));
    assert_eq!(fs::read(dir.path().join("a.tsv")).unwrap(), fs::read(dir.path().join("b.tsv")).unwrap());
    assert_eq!(fs::read(dir.path().join("a.json")).unwrap(), fs::read(dir.path().join("b.json")).unwrap());
}

#[test]
fn cidtm_batch_256_writes_a_loadable_checkpoint() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), 300);
    train(dir.path(), &["--model", "cidtm", "--batch-size", "256", "--checkpoint", "m.json", "--output", "m.tsv"]);
    let cp = load_checkpoint(fs::File::open(dir.path().join("m.json")).unwrap()).unwrap();
    let Checkpoint::Cidtm(m) = cp else { panic!("wrong checkpoint kind") };
    assert_eq!(m.clock, Some(299.0 * 3600.0));
    assert_eq!(tsv_rows(&dir.path().join("m.tsv")).len(), 300);
}

#[test]
fn cdtm_scores_the_held_out_half() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), 200);
    train(dir.path(), &["--model", "cdtm", "--cdtm-topics", "3", "--checkpoint", "m.json", "--output", "m.tsv"]);
    let rows = tsv_rows(&dir.path().join("m.tsv"));
    assert_eq!(rows.len(), 100);
    let ts: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(ts.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn config_list_runs_every_entry() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), 60);
    fs::write(
        dir.path().join("sweep.json"),
        r#"[{"model": "ohdp", "batch_size": 16, "k_corpus": 20}, {"model": "ohdp", "batch_size": 64, "k_corpus": 20}]"#,
    )
    .unwrap();
    train(dir.path(), &["--config", "sweep.json", "--checkpoint", "m.json", "--output", "m.tsv"]);
    for i in 0..2 {
        assert_eq!(tsv_rows(&dir.path().join(format!("m.tsv.{i}"))).len(), 60);
        assert!(dir.path().join(format!("m.json.{i}")).exists());
    }
}

#[test]
fn invalid_settings_exit_2() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), 20);
    for extra in [&["--model", "ohdp", "--kappa", "2"][..], &["--model", "cidtm", "--batch-size", "0"], &["--model", "cdtm", "--train-fraction", "1"]] {
        let mut args = vec!["train", "--corpus", "c.jsonl", "--vocab", "v.txt", "--checkpoint", "m", "--output", "o"];
        args.extend_from_slice(extra);
        assert_eq!(run(dir.path(), &args).status.code(), Some(2), "{extra:?}");
    }
    fs::write(dir.path().join("bad.json"), r#"{"model": "ohdp", "kapa": 0.7}"#).unwrap();
    let out = run(dir.path(), &["train", "--corpus", "c.jsonl", "--vocab", "v.txt", "--config", "bad.json", "--checkpoint", "m", "--output", "o"]);
    assert_eq!(out.status.code(), Some(2));
    let out = bin().current_dir(dir.path()).env("TM_SEED", "x").args(["simulate", "crp", "--n", "3"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

/// Trains oHDP on a synthetic corpus and returns the topic holding the most documents.
fn timeline_setup(dir: &Path) -> usize {
    synth(dir, 400);
    train(dir, &["--model", "ohdp", "--batch-size", "64", "--k-corpus", "40", "--checkpoint", "m.json", "--output", "m.tsv"]);
    ok(dir, &["timeline", "--checkpoint", "m.json", "--corpus", "c.jsonl", "--topic", "0", "--output", "t.tsv"]);
    let mut votes = vec![0usize; 40];
    for r in tsv_rows(&dir.join("t.tsv")) {
        let w: Vec<f64> = r[4].split(',').map(|x| x.parse().unwrap()).collect();
        let k = (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
        votes[k] += 1;
    }
    (0..40).max_by_key(|&k| votes[k]).unwrap()
}

fn assigned_flags(dir: &Path, topic: usize, threshold: f64) -> Vec<(String, bool)> {
    let (t, th) = (topic.to_string(), threshold.to_string());
    ok(dir, &["timeline", "--checkpoint", "m.json", "--corpus", "c.jsonl", "--topic", &t, "--threshold", &th, "--output", "t.tsv"]);
    tsv_rows(&dir.join("t.tsv")).into_iter().map(|r| (r[0].clone(), r[2] == "1")).collect()
}

fn confusion(dir: &Path, topic: usize, labels: &str) -> Vec<(String, String)> {
    fs::write(dir.join("labels.tsv"), labels).unwrap();
    let t = topic.to_string();
    ok(
        dir,
        &["timeline", "--checkpoint", "m.json", "--corpus", "c.jsonl", "--topic", &t, "--labels", "labels.tsv", "--output", "t.tsv", "--confusion", "cm.tsv"],
    );
    tsv_rows(&dir.join("cm.tsv")).into_iter().map(|r| (r[0].clone(), r[1].clone())).collect()
}

#[test]
fn timeline_threshold_sweep_is_monotone() {
    let dir = TempDir::new().unwrap();
    let topic = timeline_setup(dir.path());
    let counts: Vec<usize> = (0..=10)
        .map(|i| assigned_flags(dir.path(), topic, i as f64 / 10.0).iter().filter(|(_, a)| *a).count())
        .collect();
    assert_eq!(counts[0], 400);
    assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{counts:?}");
    assert!(counts[5] > 0 && counts[5] < 400, "{counts:?}");
}

#[test]
fn timeline_confusion_reproduces_reference_counts() {
    let dir = TempDir::new().unwrap();
    let topic = timeline_setup(dir.path());
    let flags = assigned_flags(dir.path(), topic, 0.05);
    let pos: Vec<&String> = flags.iter().filter(|(_, a)| *a).map(|(id, _)| id).collect();
    let neg: Vec<&String> = flags.iter().filter(|(_, a)| !*a).map(|(id, _)| id).collect();
    assert!(pos.len() >= 51 && neg.len() >= 23, "{} / {}", pos.len(), neg.len());

    // 51 true positives, 10 false negatives, 0 false positives, 13 true negatives.
    let mut labels = String::from("doc_id\tlabel\n");
    pos[..51].iter().for_each(|id| labels.push_str(&format!("{id}\t1\n")));
    neg[..10].iter().for_each(|id| labels.push_str(&format!("{id}\t1\n")));
    neg[10..23].iter().for_each(|id| labels.push_str(&format!("{id}\t0\n")));
    let cm = confusion(dir.path(), topic, &labels);
    let get = |k: &str| cm.iter().find(|(m, _)| m == k).unwrap().1.clone();
    assert_eq!((get("tp"), get("fn"), get("fp"), get("tn")), ("51".into(), "10".into(), "0".into(), "13".into()));
    assert_eq!(format!("{:.3}", get("accuracy").parse::<f64>().unwrap()), "0.865");
    assert_eq!(format!("{:.3}", get("recall").parse::<f64>().unwrap()), "0.836");
    assert_eq!(format!("{:.3}", get("precision").parse::<f64>().unwrap()), "1.000");

    let mut perfect = String::new();
    flags.iter().for_each(|(id, a)| perfect.push_str(&format!("{id}\t{}\n", u8::from(*a))));
    let cm = confusion(dir.path(), topic, &perfect);
    let get = |k: &str| cm.iter().find(|(m, _)| m == k).unwrap().1.clone();
    assert_eq!((get("recall"), get("precision")), ("1.000000".into(), "1.000000".into()));

    let none_positive: String = neg.iter().map(|id| format!("{id}\t0\n")).collect();
    let cm = confusion(dir.path(), topic, &none_positive);
    let get = |k: &str| cm.iter().find(|(m, _)| m == k).unwrap().1.clone();
    assert_eq!((get("recall"), get("precision")), ("NA".into(), "NA".into()));
}

#[test]
fn timeline_rejects_missing_topic() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), 50);
    train(dir.path(), &["--model", "ohdp", "--k-corpus", "10", "--checkpoint", "m.json", "--output", "m.tsv"]);
    let out = run(dir.path(), &["timeline", "--checkpoint", "m.json", "--corpus", "c.jsonl", "--topic", "10", "--output", "t.tsv"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(dir.path(), &["timeline", "--checkpoint", "c.jsonl", "--corpus", "c.jsonl", "--topic", "0", "--output", "t.tsv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_crp_single_customer_sits_alone() {
    let dir = TempDir::new().unwrap();
    let out = ok(dir.path(), &["simulate", "crp", "--n", "1"]);
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["table_sizes"], serde_json::json!([1]));
}

#[test]
fn simulate_tdpm_zero_width_gives_zero_weights() {
    let dir = TempDir::new().unwrap();
    let out = ok(dir.path(), &["simulate", "tdpm", "--history", "[[3,1,0],[2,2,5]]", "--width", "0"]);
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["weights"], serde_json::json!([0.0, 0.0, 0.0]));
}

#[test]
fn simulate_is_seeded() {
    let dir = TempDir::new().unwrap();
    let args = ["simulate", "dimsum", "--sizes", "4,3,5", "--times", "0,1.5,4", "--runs", "3"];
    let a = ok(dir.path(), &args);
    assert_eq!(a, ok(dir.path(), &args));
    assert_eq!(a.lines().count(), 3);
    let env = |seed: &str, extra: &[&str]| {
        let out = bin().current_dir(dir.path()).env("TM_SEED", seed).args(["simulate", "crp", "--n", "30"]).args(extra).output().unwrap();
        String::from_utf8(out.stdout).unwrap()
    };
    let flag = ok(dir.path(), &["simulate", "crp", "--n", "30", "--seed", "9"]);
    assert_eq!(env("9", &[]), flag);
    assert_eq!(env("3", &["--seed", "9"]), flag);
    assert_ne!(env("3", &[]), flag);
}

#[test]
fn simulate_rejects_invalid_parameters() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run(dir.path(), &["simulate", "crp", "--n", "5", "--alpha", "-1"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["simulate", "tdpm", "--history", "oops", "--width", "1"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn bench_writes_one_row_per_model_and_size() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), 80);
    ok(dir.path(), &["bench", "--corpus", "c.jsonl", "--vocab", "v.txt", "--models", "ohdp,cidtm", "--sizes", "40,80", "--k-corpus", "10", "--output", "rt.tsv"]);
    let rows = tsv_rows(&dir.path().join("rt.tsv"));
    assert_eq!(rows.len(), 4);
    assert_eq!((rows[0][0].as_str(), rows[3][0].as_str(), rows[3][1].as_str()), ("ohdp", "cidtm", "80"));
}
