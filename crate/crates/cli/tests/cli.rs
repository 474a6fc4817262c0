use std::path::Path;
use std::process::{Command, Output};

use docwin::attention::AttentionVariant;
use docwin::document::{write_corpus, Document, Vocab};
use docwin::model::{Checkpoint, ModelConfig, Transformer};

fn docwin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_docwin"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = docwin(dir, args);
    assert!(
        out.status.success(),
        "docwin {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

const COPY_CONFIG: &str = r#"{
  "task": "copy",
  "train": "data/train.jsonl",
  "valid": "data/valid.jsonl",
  "test": "data/test.jsonl",
  "model": {"d_model": 32, "n_heads": 4, "enc_layers": 2, "dec_layers": 2, "ffn_dim": 64,
            "window": 4, "pos_enc": "rel", "dropout": 0.0, "label_smoothing": 0.0},
  "training": {"max_epochs": 40, "batch_tokens": 64, "learning_rate": 0.003, "warmup_steps": 50, "patience": 3},
  "seed": 7,
  "out": "run"
}"#;

#[test]
fn copy_task_trains_to_high_accuracy_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &["gen", "--task", "copy", "--docs", "240", "--seed", "7", "--out", "data"],
    );
    std::fs::write(d.join("copy.json"), COPY_CONFIG).unwrap();
    let stdout = ok(d, &["train", "--config", "copy.json"]);
    let summary: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let acc = summary["test_token_accuracy"].as_f64().unwrap();
    assert!(acc >= 0.99, "held-out accuracy {acc}");
    for f in ["config.json", "checkpoint.json", "train_log.jsonl", "summary.json"] {
        assert!(d.join("run").join(f).is_file(), "{f} missing");
    }

    ok(d, &["train", "--config", "copy.json", "--out", "again"]);
    assert_eq!(
        read(d.join("run/train_log.jsonl")),
        read(d.join("again/train_log.jsonl"))
    );
    assert_eq!(
        read(d.join("run/checkpoint.json")),
        read(d.join("again/checkpoint.json"))
    );

    for out in ["t1", "t2"] {
        ok(
            d,
            &[
                "translate",
                "--checkpoint",
                "run/checkpoint.json",
                "--corpus",
                "data/test.jsonl",
                "--strategy",
                "sd",
                "--k",
                "1",
                "--beam",
                "3",
                "--out",
                out,
            ],
        );
    }
    assert_eq!(read(d.join("t1/hypotheses.jsonl")), read(d.join("t2/hypotheses.jsonl")));
    assert!(d.join("t1/translate_config.json").is_file());
}

#[test]
fn missing_corpus_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("copy.json"), COPY_CONFIG).unwrap();
    let out = docwin(dir.path(), &["train", "--config", "copy.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no such file"));
    let out = docwin(dir.path(), &["train", "--config", "absent.json"]);
    assert_eq!(out.status.code(), Some(2));
}

fn untrained_checkpoint(dir: &Path, docs: &[Document]) {
    let vocab = Vocab::build(docs);
    let c = ModelConfig {
        d_model: 16,
        n_heads: 2,
        enc_layers: 1,
        dec_layers: 1,
        ffn_dim: 16,
        window: 3,
        ..ModelConfig::default().with_variant(AttentionVariant::Window)
    };
    let m = Transformer::new(c, vocab.len(), 5).unwrap();
    Checkpoint::new(&m, &vocab).unwrap().save(dir.join("ck.json")).unwrap();
}

fn doc(id: &str, sentences: &[&str]) -> Document {
    let s: Vec<Vec<String>> = sentences
        .iter()
        .map(|s| s.split_whitespace().map(String::from).collect())
        .collect();
    Document::new(id, s.clone(), Some(s)).unwrap()
}

#[test]
fn bad_strategy_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let docs = vec![doc("a", &["x y"])];
    write_corpus(d.join("c.jsonl"), &docs).unwrap();
    untrained_checkpoint(d, &docs);
    let out = docwin(
        d,
        &[
            "translate",
            "--checkpoint",
            "ck.json",
            "--corpus",
            "c.jsonl",
            "--strategy",
            "beam",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let out = docwin(
        d,
        &[
            "translate",
            "--checkpoint",
            "ck.json",
            "--corpus",
            "c.jsonl",
            "--beam",
            "0",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fsd_and_sd_agree_on_single_sentence_documents() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let docs = vec![doc("a", &["x y z"]), doc("b", &["y"]), doc("c", &["z z x y"])];
    write_corpus(d.join("c.jsonl"), &docs).unwrap();
    untrained_checkpoint(d, &docs);
    let common = [
        "translate",
        "--checkpoint",
        "ck.json",
        "--corpus",
        "c.jsonl",
        "--beam",
        "4",
    ];
    ok(d, &[&common[..], &["--strategy", "fsd", "--out", "fsd"]].concat());
    ok(
        d,
        &[&common[..], &["--strategy", "sd", "--k", "2", "--out", "sd"]].concat(),
    );
    assert_eq!(
        read(d.join("fsd/hypotheses.jsonl")),
        read(d.join("sd/hypotheses.jsonl"))
    );
}

#[test]
fn eval_of_references_against_themselves_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "gen",
            "--task",
            "formality",
            "--docs",
            "60",
            "--seed",
            "3",
            "--out",
            "data",
        ],
    );
    // references rewritten as hypotheses
    let refs = read(d.join("data/test.jsonl"));
    let hyps: String = refs
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["misaligned"] = false.into();
            v.to_string() + "\n"
        })
        .collect();
    std::fs::write(d.join("hyp.jsonl"), hyps).unwrap();
    let out = ok(
        d,
        &[
            "eval",
            "--hyp",
            "hyp.jsonl",
            "--ref",
            "data/test.jsonl",
            "--formality",
            "--markers",
            "--out",
            "ev",
        ],
    );
    let r: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(r["formality"]["f1"], 1.0);
    assert_eq!(r["marker_accuracy"], 1.0);
    assert_eq!(read(d.join("ev/report.json")).trim(), out.trim());

    let none = docwin(d, &["eval", "--hyp", "hyp.jsonl", "--ref", "data/test.jsonl"]);
    assert_eq!(none.status.code(), Some(2));
}

#[test]
fn bench_cost_reports_quadratic_and_linear_growth() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        dir.path(),
        &["bench-cost", "--variant", "full,window", "--w", "10", "--out", "."],
    );
    let rows: Vec<Vec<String>> = out
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    let ratios: Vec<f64> = rows.iter().map(|r| r[5].parse().unwrap()).collect();
    assert_eq!(&ratios[..3], &[1.0, 4.0, 9.0]);
    assert!(ratios[4] > 1.9 && ratios[4] < 2.1);
    assert!(ratios[5] > 2.9 && ratios[5] < 3.1);
    assert_eq!(read(dir.path().join("cost.csv")), out);
}

#[test]
fn sentence_level_focus_is_complete() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let docs = vec![doc("a", &["x y", "z", "y y x"]), doc("b", &["z x", "x"])];
    write_corpus(d.join("c.jsonl"), &docs).unwrap();
    untrained_checkpoint(d, &docs);
    let out = ok(
        d,
        &[
            "attn-focus",
            "--checkpoint",
            "ck.json",
            "--corpus",
            "c.jsonl",
            "--k",
            "0,2",
            "--full",
        ],
    );
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "context,focus_percent,target_tokens");
    assert!(lines[1].starts_with("k=0,100.0000,"));
    assert!(lines[3].starts_with("full,"));
}
