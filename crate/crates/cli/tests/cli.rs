use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dire_core::io::{write_emb, write_labels, Manifest};
use dire_core::Matrix;

fn dire(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dire"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_pair(dir: &Path) {
    let real = Matrix::from_rows(&[[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9], [0.5, 0.5], [0.2, 0.8]]).unwrap();
    let syn = Matrix::from_rows(&[[1.0, 0.05], [0.7, 0.3], [0.05, 1.0], [0.3, 0.6]]).unwrap();
    write_emb(dir.join("r.emb"), &real).unwrap();
    write_emb(dir.join("s.emb"), &syn).unwrap();
    write_labels(dir.join("lr.csv"), &[0, 0, 1, 1, 0, 1]).unwrap();
    write_labels(dir.join("ls.csv"), &[0, 0, 1, 1]).unwrap();
}

#[test]
fn metrics_smoke_prints_a_json_report() {
    let dir = tempfile::tempdir().unwrap();
    write_pair(dir.path());
    let o = dire(
        dir.path(),
        &["metrics", "--real", "r.emb", "--syn", "s.emb", "--labels-real", "lr.csv", "--labels-syn", "ls.csv", "-k", "2"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for key in ["coverage", "vendi", "mean_intra_class_cosine", "per_class_cosine", "k_used", "n_real", "n_syn"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    assert_eq!(report["k_used"], 2);
    assert_eq!(report["n_syn"], 4);

    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("method,ipc,coverage,similarity,vendi,k"));
    assert!(csv.lines().nth(1).unwrap().starts_with("s,2,"));
    // a second call appends without repeating the header
    dire(
        dir.path(),
        &["metrics", "--real", "r.emb", "--syn", "s.emb", "--labels-real", "lr.csv", "--labels-syn", "ls.csv"],
    );
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let m = Manifest::read(dir.path().join("metrics.json.manifest.json")).unwrap();
    assert_eq!(m.subcommand, "metrics");
    assert_eq!(m.inputs.len(), 4);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = dire(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(dire(dir.path(), &["recover", "--ipc", "3"]).status.code(), Some(2));
    assert_eq!(dire(dir.path(), &[]).status.code(), Some(2));
    assert_eq!(dire(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_dire"))
        .args(["bench", "--shapes", "4x4x4"])
        .env("DIRE_THREADS", "many")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("DIRE_THREADS"));
}

#[test]
fn malformed_inputs_exit_1_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    write_pair(dir.path());
    fs::write(dir.path().join("bad.emb"), b"EMB1\x01\x00\x05\x00\x00\x00").unwrap();
    let o = dire(
        dir.path(),
        &["metrics", "--real", "bad.emb", "--syn", "s.emb", "--labels-real", "lr.csv", "--labels-syn", "ls.csv"],
    );
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains("offset"), "{err}");

    fs::write(dir.path().join("bad.csv"), "label\n0\nx\n").unwrap();
    let o = dire(
        dir.path(),
        &["metrics", "--real", "r.emb", "--syn", "s.emb", "--labels-real", "bad.csv", "--labels-syn", "ls.csv"],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(dire(d, &["gen-data", "--out", "mix", "--classes", "3", "--dim", "4", "--per-class", "20"]).status.success());
    assert!(dire(d, &["squeeze", "--data", "mix", "--out", "t.dirt", "--epochs", "3"]).status.success());
    for (text, key) in [(r#"{"lr": -1}"#, "lr"), (r#"{"ipcc": 3}"#, "ipcc"), (r#"{"rc": "x"}"#, "rc"), ("{", "<document>")] {
        fs::write(d.join("run.json"), text).unwrap();
        let o = dire(d, &["recover", "--teacher", "t.dirt", "--data", "mix", "--out", "s", "--config", "run.json"]);
        assert_eq!(o.status.code(), Some(1), "{text}");
        assert!(stderr(&o).contains(key), "{text}: {}", stderr(&o));
    }
    fs::write(d.join("run.json"), "{}").unwrap();
    let o = dire(d, &["recover", "--teacher", "t.dirt", "--data", "mix", "--out", "s", "--config", "run.json", "--iters", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = Manifest::read(d.join("s.manifest.json")).unwrap();
    assert_eq!(m.config["ipc"], 10);
    assert_eq!(m.config["iters"], 5);
    assert_eq!(m.outputs.len(), 4);
}

#[test]
fn pipeline_replays_to_identical_digests() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let steps: [&[&str]; 6] = [
        &["gen-data", "--out", "data/mix", "--classes", "3", "--dim", "5", "--per-class", "40", "--seed", "2"],
        &["squeeze", "--data", "data/mix", "--out", "data/t.dirt", "--epochs", "8"],
        &["recover", "--teacher", "data/t.dirt", "--data", "data/mix", "--out", "out/on", "--ipc", "3", "--iters", "40"],
        &["relabel", "--teacher", "data/t.dirt", "--points", "out/on.points.emb", "--out", "out/relabel.emb"],
        &[
            "evaluate", "--points", "out/on.points.emb", "--labels", "out/on.labels.csv", "--soft", "out/on.soft.emb",
            "--data", "data/mix", "--out", "out/eval.json", "--student-epochs", "20",
        ],
        &["ablate", "--teacher", "data/t.dirt", "--data", "data/mix", "--out", "out/ablation.csv", "--ipc", "2", "--iters", "10", "--student-epochs", "5"],
    ];
    for s in steps {
        let o = dire(d, s);
        assert!(o.status.success(), "{s:?}: {}", stderr(&o));
    }
    assert_eq!(fs::read(d.join("out/relabel.emb")).unwrap(), fs::read(d.join("out/on.soft.emb")).unwrap());
    let trace = fs::read_to_string(d.join("out/on.trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("iter,l_ce,l_bn,cd,cdm,edm,total"));
    assert_eq!(trace.lines().count(), 1 + 41);
    let ablation = fs::read_to_string(d.join("out/ablation.csv")).unwrap();
    assert_eq!(ablation.lines().count(), 1 + 7);

    for mf in ["data/mix.manifest.json", "data/t.dirt.manifest.json", "out/on.manifest.json", "out/ablation.csv.manifest.json"] {
        let o = dire(d, &["replay", "--manifest", mf]);
        assert!(o.status.success(), "{mf}: {}", stderr(&o));
    }

    // tampering with an output is reported by the next replay, which then restores it
    fs::write(d.join("out/on.labels.csv"), "label\n").unwrap();
    let m = Manifest::read(d.join("out/on.manifest.json")).unwrap();
    assert_eq!(m.mismatched_outputs().unwrap().len(), 1);
    assert!(dire(d, &["replay", "--manifest", "out/on.manifest.json"]).status.success());

    // a changed input refuses to replay
    fs::write(d.join("data/t.dirt"), b"DIRT").unwrap();
    let o = dire(d, &["replay", "--manifest", "out/on.manifest.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("changed"));
}

#[test]
fn bench_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = dire(dir.path(), &["bench", "--shapes", "16x12x8", "--reps", "3", "--out", "b"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("b.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("kernel,N,M,D,naive_s,fast_s,speedup,max_dev"));
    assert_eq!(csv.lines().count(), 3);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("b.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 2);
}
