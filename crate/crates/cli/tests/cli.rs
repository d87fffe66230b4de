use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_hnn-score");

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(cwd)
        .env_remove("HNN_SCORE_DATA_DIR")
        .output()
        .expect("run hnn-score")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = run(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// The failure diagnostic is a single `error[...]` line.
fn assert_single_error_line(out: &Output, category: &str) {
    assert!(!out.status.success());
    let err = stderr(out);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with(&format!("error[{category}]: ")), "{err}");
}

fn synth(dir: &Path, name: &str, n: usize) {
    ok(&["synth", "--n", &n.to_string(), "--seed", "1", "--out", name], dir);
}

#[test]
fn synth_writes_one_record_per_line_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d.jsonl", 100);
    let text = std::fs::read_to_string(dir.path().join("d.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 100);
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["labels"].as_array().unwrap().len(), 5);
    }
    let m: Value = serde_json::from_slice(&std::fs::read(dir.path().join("d.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "synth");
    assert_eq!(m["seed"], 1);
    assert_eq!(m["dataset_fingerprint"].as_str().unwrap().len(), 64);
}

#[test]
fn synth_manifest_reproduces_the_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "a.jsonl", 40);
    ok(&["synth", "--spec", "a.jsonl.manifest.json", "--out", "b.jsonl"], d);
    assert_eq!(std::fs::read(d.join("a.jsonl")).unwrap(), std::fs::read(d.join("b.jsonl")).unwrap());
}

#[test]
fn invalid_synth_spec_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("spec.json"), r#"{"n": 10, "seed": 0, "label_prior": [0.5, 0.5]}"#).unwrap();
    let out = run(&["synth", "--spec", "spec.json"], dir.path());
    assert_single_error_line(&out, "validation");
    assert!(stderr(&out).contains("label_prior"), "{}", stderr(&out));
}

#[test]
fn train_uses_the_split_for_each_kind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "d.jsonl", 100);
    std::fs::write(d.join("cfg.json"), r#"{"train": {"epochs": 2}}"#).unwrap();
    for (kind, split, sizes) in [("nb", "shallow", (80, 0, 20)), ("hnn", "deep", (70, 15, 15))] {
        let model = format!("{kind}.json");
        let out = ok(&["train", "--model", kind, "--data", "d.jsonl", "--config", "cfg.json", "--out", &model, "--json"], d);
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert!(v["split"].as_str().unwrap().starts_with(split), "{v}");
        let s = &v["sizes"];
        assert_eq!((s["train"].as_u64(), s["validation"].as_u64(), s["test"].as_u64()), (Some(sizes.0), Some(sizes.1), Some(sizes.2)));
        let m: Value = serde_json::from_slice(&std::fs::read(d.join(format!("{model}.manifest.json"))).unwrap()).unwrap();
        assert!(m["split"].as_str().unwrap().starts_with(split));
        assert_eq!(m["config"]["train"]["epochs"], 2);
    }
}

#[test]
fn train_reports_epochs_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "d.jsonl", 60);
    std::fs::write(d.join("cfg.json"), r#"{"mlp": {"epochs": 3}}"#).unwrap();
    let out = ok(&["train", "--model", "mlp", "--data", "d.jsonl", "--config", "cfg.json", "--out", "m.json"], d);
    let epochs = stderr(&out).lines().filter(|l| l.starts_with("epoch ")).count();
    assert_eq!(epochs, 3);
}

#[test]
fn eval_refuses_a_model_with_a_tampered_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "d.jsonl", 60);
    ok(&["train", "--model", "nb", "--data", "d.jsonl", "--out", "m.json"], d);
    ok(&["eval", "--model", "m.json", "--data", "d.jsonl"], d);

    let mut v: Value = serde_json::from_slice(&std::fs::read(d.join("m.json")).unwrap()).unwrap();
    let tokens = v["vocab"]["tokens"].as_array_mut().expect("vocab tokens");
    let last = tokens.len() - 1;
    tokens[last] = Value::String("tampered".into());
    std::fs::write(d.join("bad.json"), serde_json::to_vec(&v).unwrap()).unwrap();
    let out = run(&["eval", "--model", "bad.json", "--data", "d.jsonl"], d);
    assert_single_error_line(&out, "format");
    assert!(stderr(&out).contains("fingerprint"), "{}", stderr(&out));
}

#[test]
fn score_keeps_input_order_and_accepts_empty_text() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "d.jsonl", 60);
    ok(&["train", "--model", "logreg", "--data", "d.jsonl", "--out", "m.json"], d);
    let texts = ["the gas is flammable", "", "balloons rise because helium is light"];
    std::fs::write(d.join("batch.txt"), texts.join("\n") + "\n").unwrap();
    let batch = ok(&["score", "--model", "m.json", "--file", "batch.txt", "--json"], d);
    let rows: Vec<Value> = String::from_utf8(batch.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), texts.len());
    for (i, (row, text)) in rows.iter().zip(texts).enumerate() {
        assert_eq!(row["index"], i);
        let single = ok(&["score", "--model", "m.json", "--text", text, "--json"], d);
        let one: Value = serde_json::from_slice(&single.stdout).unwrap();
        assert_eq!(one["probs"], row["probs"]);
        assert_eq!(row["labels"].as_array().unwrap().len(), 5);
    }
}

#[test]
fn bench_reports_one_row_per_kind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.json"), r#"{"train": {"epochs": 1}}"#).unwrap();
    let out = ok(&["bench", "--models", "nb,logreg", "--n", "200", "--config", "cfg.json"], d);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.trim_start().starts_with("nb")), "{text}");
    assert!(text.lines().any(|l| l.trim_start().starts_with("logreg")), "{text}");
    let out = run(&["bench", "--models", "nb", "--n", "50", "--repetitions", "2"], d);
    assert_eq!(out.status.code(), Some(2));
    assert_single_error_line(&out, "usage");
}

#[test]
fn stats_rejects_missing_and_malformed_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = run(&["stats", "--fixture", "missing.json"], d);
    assert_single_error_line(&out, "io");

    let table = r#"{"aspects": [1, 2, 3, 4, 5], "models": {"HNN": [90, 91, 92, 93, 94], "NB": [80, 81, 82, 83]}}"#;
    std::fs::write(d.join("t.json"), table).unwrap();
    let out = run(&["stats", "--fixture", "t.json"], d);
    assert_single_error_line(&out, "validation");
    assert!(stderr(&out).contains("NB"), "{}", stderr(&out));
}

#[test]
fn stats_prints_the_comparison_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["stats"], dir.path());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["HNN", "ANN", "BERT", "NB", "LogReg"] {
        assert!(text.contains(name), "{text}");
    }
}

#[test]
fn outputs_are_not_overwritten_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "d.jsonl", 10);
    let out = run(&["synth", "--n", "10", "--out", "d.jsonl"], d);
    assert_single_error_line(&out, "exists");
    ok(&["synth", "--n", "12", "--out", "d.jsonl", "--force"], d);
    assert_eq!(std::fs::read_to_string(d.join("d.jsonl")).unwrap().lines().count(), 12);
}

#[test]
fn usage_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_single_error_line(&out, "usage");
    let out = run(&["train", "--model", "svm", "--data", "x", "--out", "y"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_single_error_line(&out, "usage");
}

#[test]
fn relative_data_paths_resolve_against_the_data_dir() {
    let data = tempfile::tempdir().unwrap();
    let work = tempfile::tempdir().unwrap();
    synth(data.path(), "d.jsonl", 30);
    ok(&["train", "--model", "nb", "--data", &data.path().join("d.jsonl").to_string_lossy(), "--out", "m.json"], work.path());
    let out = Command::new(BIN)
        .args(["eval", "--model", "m.json", "--data", "d.jsonl"])
        .current_dir(work.path())
        .env("HNN_SCORE_DATA_DIR", data.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
}
