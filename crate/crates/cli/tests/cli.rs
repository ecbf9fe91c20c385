use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn glinkx(args: &[&str]) -> Output {
    glinkx_env(args, &[])
}

fn glinkx_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_glinkx"));
    cmd.args(args).env_remove("GLINKX_THREADS").env("RUST_LOG", "off");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn records(out: &Output) -> Vec<Value> {
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).expect("stdout is JSON lines"))
        .collect()
}

fn error_of(out: &Output) -> Value {
    assert!(!out.status.success(), "command unexpectedly succeeded");
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    let last = stderr.lines().last().expect("stderr has an error line");
    serde_json::from_str(last).expect("stderr error is JSON")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Toy {
    dir: TempDir,
}

impl Toy {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let t = Toy { dir };
        t.write("edges.txt", "# toy\n0 1\n1 2\n2 0\n");
        t.write("labels.txt", "0\n1\n1\n");
        t.write("features.txt", "1.0 0.0\n0.0 1.0\n0.5 0.5\n");
        t.write("split.txt", "train\nvalid\ntest\n");
        t
    }

    fn write(&self, name: &str, text: &str) {
        fs::write(self.dir.path().join(name), text).unwrap();
    }

    fn file(&self, name: &str) -> String {
        path(&self.dir.path().join(name)).to_string()
    }

    fn ingest(&self, out: &str) -> Output {
        glinkx(&[
            "ingest",
            "--name",
            "toy",
            "--edges",
            &self.file("edges.txt"),
            "--labels",
            &self.file("labels.txt"),
            "--features",
            &self.file("features.txt"),
            "--split",
            &self.file("split.txt"),
            "--classes",
            "2",
            "--out",
            &self.file(out),
        ])
    }
}

#[test]
fn toy_ingest_writes_a_manifest() {
    let toy = Toy::new();
    let manifest = &records(&toy.ingest("bundle"))[0];
    assert_eq!(manifest["nodes"], 3);
    assert_eq!(manifest["edges"], 3);
    assert_eq!(manifest["classes"], 2);
    assert_eq!(manifest["feature_dim"], 2);
    let on_disk: Value = serde_json::from_slice(&fs::read(toy.dir.path().join("bundle/manifest.json")).unwrap()).unwrap();
    assert_eq!(&on_disk, manifest);
}

#[test]
fn feature_row_count_mismatch_is_a_typed_error() {
    let toy = Toy::new();
    toy.write("features.txt", "1.0 0.0\n0.0 1.0\n");
    let err = error_of(&toy.ingest("bundle"));
    assert_eq!(err["error"], "dimension_mismatch");
}

#[test]
fn unknown_node_names_the_line() {
    let toy = Toy::new();
    toy.write("edges.txt", "0 1\n1 7\n");
    let err = error_of(&toy.ingest("bundle"));
    assert_eq!(err["error"], "unknown_node");
    assert!(err["message"].as_str().unwrap().contains(":2:"), "{err}");
}

#[test]
fn label_beyond_class_count_is_rejected() {
    let toy = Toy::new();
    toy.write("labels.txt", "0\n1\n2\n");
    let err = error_of(&toy.ingest("bundle"));
    assert_eq!(err["error"], "label_out_of_range");
    assert!(err["message"].as_str().unwrap().contains(":3:"), "{err}");
}

#[test]
fn bad_thread_cap_and_missing_data_fail_with_codes() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("none");
    let err = error_of(&glinkx_env(&["lp", "--data", path(&missing)], &[("GLINKX_THREADS", "many")]));
    assert_eq!(err["error"], "invalid_threads");
    let err = error_of(&glinkx(&["lp", "--data", path(&missing)]));
    assert_eq!(err["error"], "io");
    let out = glinkx(&["run", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["error"], "usage");
}

#[test]
fn complete_graph_has_no_two_hop_exclusive_structure() {
    let toy = Toy::new();
    assert!(toy.ingest("bundle").status.success());
    let err = error_of(&glinkx(&["lp", "--data", &toy.file("bundle"), "--masked"]));
    assert_eq!(err["error"], "no_two_hop_exclusive");
}

#[test]
fn empty_logs_cannot_be_reported() {
    let dir = TempDir::new().unwrap();
    let log = dir.path().join("empty.jsonl");
    fs::write(&log, "").unwrap();
    assert_eq!(error_of(&glinkx(&["report", path(&log)]))["error"], "empty_logs");
}

fn planted_bundle(dir: &Path) -> String {
    let out = dir.join("planted");
    let manifest = &records(&glinkx(&[
        "synth",
        "planted",
        "--nodes",
        "400",
        "--degree",
        "10",
        "--splits",
        "2",
        "--seed",
        "3",
        "--out",
        path(&out),
    ]))[0];
    assert_eq!(manifest["splits"], 2);
    path(&out).to_string()
}

const QUICK: [&str; 6] = ["--epochs", "15", "--hidden", "16", "--lr", "0.01"];

#[test]
fn run_then_report_summarizes_each_method() {
    let dir = TempDir::new().unwrap();
    let data = planted_bundle(dir.path());
    let mut args = vec!["run", "--data", &data];
    args.extend(QUICK);
    let runs = records(&glinkx(&args));
    assert_eq!(runs.len(), 2);
    assert!(runs.iter().all(|r| r["kind"] == "run" && r["method"] == "glinkx-adjacency"));
    let lp = records(&glinkx(&["lp", "--data", &data, "--hops", "2", "--alpha", "0.1,0.9"]));
    assert_eq!(lp.iter().filter(|r| r["kind"] == "run").count(), 2);

    let log = dir.path().join("runs.jsonl");
    let text: String = runs.iter().chain(&lp).map(|r| r.to_string() + "\n").collect();
    fs::write(&log, &text).unwrap();
    let summary = records(&glinkx(&["report", path(&log)]));
    let methods: Vec<&str> = summary.iter().map(|s| s["method"].as_str().unwrap()).collect();
    assert_eq!(methods, ["glinkx-adjacency", "lp-2hop"]);
    assert!(summary.iter().all(|s| s["count"] == 2));

    // a report of the combined log and summary reproduces the summary
    let again = dir.path().join("again.jsonl");
    let combined = text + &summary.iter().map(|s| s.to_string() + "\n").collect::<String>();
    fs::write(&again, combined).unwrap();
    assert_eq!(records(&glinkx(&["report", path(&again)])), summary);
}

#[test]
fn ablation_records_name_the_removed_component() {
    let dir = TempDir::new().unwrap();
    let data = planted_bundle(dir.path());
    let mut args = vec!["ablate", "--data", &data, "--drop", "prop", "--scope", "stage3", "--split", "1"];
    args.extend(QUICK);
    let recs = records(&glinkx(&args));
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0]["method"], "glinkx-no-prop-stage3-adjacency");
    assert_eq!(recs[0]["split"], 1);
}

#[test]
fn stored_embeddings_feed_a_saved_model_used_inductively() {
    let dir = TempDir::new().unwrap();
    let data = planted_bundle(dir.path());
    let kge = records(&glinkx(&[
        "kge-train", "--data", &data, "--dim", "8", "--epochs", "3", "--negatives", "5", "--store",
    ]));
    assert_eq!(kge.last().unwrap()["dim"], 8);
    assert_eq!(kge.iter().filter(|r| r["kind"] == "kge_epoch").count(), 3);

    let models = dir.path().join("models");
    let mut args = vec!["run", "--data", &data, "--pe", "kge", "--split", "0", "--save-model", path(&models)];
    args.extend(QUICK);
    let recs = records(&glinkx(&args));
    assert_eq!(recs[0]["method"], "glinkx-kge");
    let model_dir = recs[1]["path"].as_str().unwrap();

    let edges = dir.path().join("new_edges.txt");
    fs::write(&edges, "400 0\n400 1\n0 400\n").unwrap();
    let features = dir.path().join("new_features.txt");
    fs::write(&features, format!("{}\n{}\n", vec!["0.5"; 16].join(" "), vec!["-0.5"; 16].join(" "))).unwrap();
    let preds = records(&glinkx(&[
        "inductive",
        "--model",
        model_dir,
        "--count",
        "2",
        "--edges",
        path(&edges),
        "--features",
        path(&features),
    ]));
    assert_eq!(preds.len(), 2);
    assert_eq!(preds[0]["node"], 400);
    assert_eq!(preds[0]["isolated"], false);
    assert_eq!(preds[1]["isolated"], true);
    let total: f64 = preds[1]["probs"].as_array().unwrap().iter().map(|p| p.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn linkx_and_feature_baselines_emit_records() {
    let dir = TempDir::new().unwrap();
    let data = planted_bundle(dir.path());
    for (flag, method) in [(None, "linkx"), (Some("--features-only"), "mlp")] {
        let mut args = vec!["linkx", "--data", &data, "--split", "0"];
        args.extend(QUICK);
        args.extend(flag);
        let recs = records(&glinkx(&args));
        assert_eq!(recs[0]["method"], method);
        assert!(recs[0]["test_acc"].as_f64().unwrap() > 0.25);
    }
}

#[test]
fn counting_experiment_reports_a_slope() {
    let recs = records(&glinkx_env(
        &["theory", "counting", "--nodes", "1000", "--ks", "32,64,128,256", "--trials", "5"],
        &[("GLINKX_THREADS", "1")],
    ));
    let slope = recs.last().unwrap();
    assert_eq!(slope["kind"], "slope");
    assert!((slope["loglog_slope"].as_f64().unwrap() + 0.5).abs() < 0.2, "{slope}");
}

#[test]
fn paper_grid_flag_rejects_off_grid_settings() {
    let dir = TempDir::new().unwrap();
    let data = planted_bundle(dir.path());
    let err = error_of(&glinkx(&["run", "--data", &data, "--lr", "0.05", "--paper-grid"]));
    assert_eq!(err["error"], "off_grid");
    let err = error_of(&glinkx(&["run", "--data", &data, "--profile", "cora-adjacency"]));
    assert_eq!(err["error"], "unknown_profile");
}

#[test]
fn embeddings_can_be_trained_on_a_separate_edge_list() {
    let toy = Toy::new();
    assert!(toy.ingest("bundle").status.success());
    toy.write("train_edges.txt", "0 1\n");
    let out = toy.file("pe.dmat");
    let recs = records(&glinkx(&[
        "kge-train", "--data", &toy.file("bundle"), "--edges", &toy.file("train_edges.txt"), "--dim", "4", "--epochs", "2",
        "--negatives", "1", "--out", &out,
    ]));
    assert_eq!(recs.last().unwrap()["rows"], 3);
    assert!(std::path::Path::new(&out).exists());
    toy.write("bad_edges.txt", "0 9\n");
    let err = error_of(&glinkx(&["kge-train", "--data", &toy.file("bundle"), "--edges", &toy.file("bad_edges.txt")]));
    assert_eq!(err["error"], "unknown_node");
}
