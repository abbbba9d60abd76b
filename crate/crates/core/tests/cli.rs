use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn data(file: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(file)
}

fn reqgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reqgen"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Writes a copy of the quick config into `dir` with absolute input paths,
/// then applies `patch` on top.
fn config_in(dir: &Path, patch: Value) -> PathBuf {
    let mut config: Value = serde_json::from_str(&fs::read_to_string(data("quick.json")).unwrap()).unwrap();
    config["ontology"] = json!(data("ontology.jsonl"));
    config["corpus"] = json!(data("corpus.jsonl"));
    config["out_dir"] = json!(dir.join("out"));
    merge(&mut config, patch);
    let path = dir.join("config.json");
    fs::write(&path, config.to_string()).unwrap();
    path
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

fn small_corpus(dir: &Path, n: usize) -> PathBuf {
    let text = fs::read_to_string(data("corpus.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().take(n).collect();
    let path = dir.join("small.jsonl");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&reqgen(&[])), 2);
    assert_eq!(code(&reqgen(&["train"])), 2);
    assert_eq!(code(&reqgen(&["frobnicate"])), 2);
    assert_eq!(code(&reqgen(&["prepare", "--config", "/nonexistent/config.json"])), 2);
    assert_eq!(code(&reqgen(&["--help"])), 0);
}

#[test]
fn missing_dataset_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = config_in(dir.path(), json!({}));
    let out = reqgen(&["train", "--config", config.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("prepared dataset"));
}

#[test]
fn end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let config = config_in(dir.path(), json!({"model": {"epochs": 6}}));
    let config = config.to_str().unwrap();
    let out_dir = dir.path().join("out");

    let out = reqgen(&["prepare", "--config", config]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let coverage: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("coverage.json")).unwrap()).unwrap();
    for field in ["records", "prepared", "skipped", "keywords", "keywords_matched", "coverage"] {
        assert!(coverage.get(field).is_some(), "{field}");
    }
    assert_eq!(coverage["records"], 50);
    let prepared = fs::read_to_string(out_dir.join("prepared.jsonl")).unwrap();
    let first: Value = serde_json::from_str(prepared.lines().next().unwrap()).unwrap();
    assert_eq!(first["keywords"], json!(["landing", "ground"]));
    assert!(prepared.lines().all(|l| {
        let v: Value = serde_json::from_str(l).unwrap();
        v["keywords"].as_array().is_some_and(|k| k.len() >= 2)
    }));

    let out = reqgen(&["train", "--config", config]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("epoch")).count(), 6);
    let first_ckpt = fs::read(out_dir.join("checkpoint.json")).unwrap();

    let again = dir.path().join("again");
    let out = reqgen(&["train", "--config", config, "--out", again.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "a fresh output directory has no prepared data");
    fs::create_dir_all(&again).unwrap();
    for f in ["prepared.jsonl", "vocab.json"] {
        fs::copy(out_dir.join(f), again.join(f)).unwrap();
    }
    let out = reqgen(&["train", "--config", config, "--out", again.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(again.join("checkpoint.json")).unwrap(), first_ckpt);

    let out = reqgen(&[
        "generate",
        "--config",
        config,
        "--keywords",
        "landing, internal simulator, ground",
        "--roles",
        data("roles.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let (line, body) = stdout.split_once('\n').unwrap();
    let response: Value = serde_json::from_str(body).unwrap();
    assert_eq!(response["text"], line);
    assert_eq!(response["complete"], true);
    let text = line.to_lowercase();
    for k in ["landing", "internal simulator", "ground"] {
        assert!(text.contains(k), "{k} missing from {line}");
    }
    let overlap = response["element_overlap"].as_object().unwrap();
    assert_eq!(overlap.len(), 3);
    assert!(!response["candidates"].as_array().unwrap().is_empty());

    let out = reqgen(&["generate", "--config", config, "--keywords", "landing"]);
    assert_eq!(code(&out), 2);

    let out = reqgen(&["evaluate", "--config", config]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("BLEU1"));
    assert!(out_dir.join("evaluation.json").is_file());
}

#[test]
fn injection_off_checkpoint_has_no_injection_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path(), 10);
    let config = config_in(
        dir.path(),
        json!({"corpus": corpus, "toggles": {"injection": false}, "model": {"epochs": 1}}),
    );
    let config = config.to_str().unwrap();
    assert_eq!(code(&reqgen(&["prepare", "--config", config])), 0);
    assert_eq!(code(&reqgen(&["train", "--config", config])), 0);
    let ckpt: Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("out").join("checkpoint.json")).unwrap(),
    )
    .unwrap();
    let names: Vec<&String> = ckpt["parameters"].as_object().unwrap().keys().collect();
    assert!(!names.is_empty());
    assert!(names.iter().all(|n| !n.starts_with("injection") && !n.starts_with("knowledge")));
    assert_eq!(ckpt["config"]["injection_layers"], json!([]));
}

#[test]
fn crossval_two_folds_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path(), 10);
    let config = config_in(
        dir.path(),
        json!({"corpus": corpus, "k_folds": 2, "model": {"epochs": 2}, "decode": {"max_len": 16}}),
    );
    let config = config.to_str().unwrap();
    assert_eq!(code(&reqgen(&["prepare", "--config", config])), 0);
    let out = reqgen(&["crossval", "--config", config]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(stdout.contains("fold 1") && stdout.contains("fold 2") && stdout.contains("mean"));

    let path = dir.path().join("out").join("crossval.json");
    let first = fs::read_to_string(&path).unwrap();
    let report: Value = serde_json::from_str(&first).unwrap();
    let folds = report["folds"].as_array().unwrap();
    assert_eq!(folds.len(), 2);
    let b1: Vec<f64> = folds.iter().map(|f| f["report"]["bleu1"].as_f64().unwrap()).collect();
    let mean = report["mean"]["bleu1"].as_f64().unwrap();
    assert!((mean - (b1[0] + b1[1]) / 2.0).abs() < 1e-12);
    let f0 = folds[0]["report"]["rouge"]["L"]["f"].as_f64().unwrap();
    let f1 = folds[1]["report"]["rouge"]["L"]["f"].as_f64().unwrap();
    assert!((report["mean"]["rouge"]["L"]["f"].as_f64().unwrap() - (f0 + f1) / 2.0).abs() < 1e-12);

    assert_eq!(code(&reqgen(&["crossval", "--config", config])), 0);
    assert_eq!(fs::read_to_string(&path).unwrap(), first);
}

#[test]
fn ablate_emits_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path(), 8);
    let config = config_in(
        dir.path(),
        json!({
            "corpus": corpus,
            "model": {"epochs": 1},
            "decode": {"max_len": 12, "beam_size": 2},
            "ablation": {
                "layer_plans": [[[1, 5], [2, 1]], [[1, 5], [2, 2], [4, 1]]],
                "freq_thresholds": [0, 10, 50],
                "toggles": [{"injection": true, "copy": true, "syntax_decoding": true}]
            }
        }),
    );
    let config = config.to_str().unwrap();
    assert_eq!(code(&reqgen(&["prepare", "--config", config])), 0);
    let out = reqgen(&["ablate", "--config", config]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table: Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("out").join("ablation.json")).unwrap(),
    )
    .unwrap();
    let rows = table["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 6);
    let layers: Vec<&str> = rows.iter().map(|r| r["layers"].as_str().unwrap()).collect();
    assert!(layers.contains(&"1(5),2(1)") && layers.contains(&"1(5),2(2),4(1)"));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("(ReqGen)"));
}
