mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::fixture;
use sentsimp::cli::{LITERATURE_ROWS, VARIANT_ROWS};

fn sentsimp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sentsimp"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = sentsimp(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn train(out: &Path, variant: &str, epochs: &str) {
    let (src, tgt, valid) = (fixture("train.src"), fixture("train.tgt"), fixture("valid"));
    ok(&[
        "train",
        "--train-src",
        p(&src),
        "--train-tgt",
        p(&tgt),
        "--valid",
        p(&valid),
        "--variant",
        variant,
        "--seed",
        "3",
        "--out",
        p(out),
        "--set",
        &format!("epochs={epochs}"),
    ]);
}

#[test]
fn train_writes_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train(&run, "bert", "2");
    for f in [
        "model.ckpt",
        "vocab.txt",
        "history.tsv",
        "train.resolved",
        "corpus_stats.json",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let history = fs::read_to_string(run.join("history.tsv")).unwrap();
    assert_eq!(history.lines().next(), Some("epoch\tloss\tsari\tlr"));
    assert_eq!(history.lines().count(), 3);
    let resolved = fs::read_to_string(run.join("train.resolved")).unwrap();
    assert!(resolved.lines().any(|l| l == "seed=3"));
    assert!(resolved.lines().any(|l| l == "epochs=2"));
    let stats: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("corpus_stats.json")).unwrap()).unwrap();
    assert!(stats.get("train").is_some() && stats.get("valid").is_some());
}

#[test]
fn training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train(&a, "gpt2", "2");
    train(&b, "gpt2", "2");
    for f in ["history.tsv", "model.ckpt", "vocab.txt"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn missing_input_exits_2_and_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.src");
    let out = sentsimp(&[
        "train",
        "--train-src",
        p(&missing),
        "--train-tgt",
        p(&fixture("train.tgt")),
        "--valid",
        p(&fixture("valid")),
        "--out",
        p(&dir.path().join("r")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.src"));
    assert!(!dir.path().join("r").exists());
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(sentsimp(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(sentsimp(&["train", "--seed", "x"]).status.code(), Some(2));
    assert_eq!(sentsimp(&["eval", "--set", "no_such_key=1"]).status.code(), Some(2));
    assert_eq!(sentsimp(&["--help"]).status.code(), Some(0));
}

#[test]
fn simplify_eval_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train(&run, "bert", "1");

    let ckpt = run.join("model.ckpt");
    let printed = ok(&[
        "simplify",
        "--checkpoint",
        p(&ckpt),
        "--input",
        p(&fixture("test.src")),
        "--out",
        p(&run),
    ]);
    let simplified = run.join("simplified.txt");
    assert_eq!(printed.trim(), p(&simplified));
    assert_eq!(fs::read_to_string(&simplified).unwrap().lines().count(), 5);

    let empty_in = dir.path().join("empty.txt");
    fs::write(&empty_in, "").unwrap();
    let empty_out = dir.path().join("empty.out");
    ok(&[
        "simplify",
        "--checkpoint",
        p(&ckpt),
        "--input",
        p(&empty_in),
        "--output",
        p(&empty_out),
        "--out",
        p(&run),
    ]);
    assert_eq!(fs::read_to_string(&empty_out).unwrap(), "");

    ok(&[
        "eval",
        "--system",
        p(&simplified),
        "--eval",
        p(&fixture("test")),
        "--out",
        p(&run),
    ]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("eval.json")).unwrap()).unwrap();
    for key in ["label", "sari", "add", "keep", "delete", "n"] {
        assert!(json.get(key).is_some(), "eval.json lacks {key}");
    }
    assert_eq!(json["label"], "BERT");
    assert_eq!(json["n"], 5);
    let sari = json["sari"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&sari));

    let txt = fs::read_to_string(run.join("eval.txt")).unwrap();
    assert!(txt.contains("BERT 46.80 12.13 67.16 61.22"));
    assert!(txt.contains("GPT-2 46.35 12.60 66.64 59.73"));
    let hist = fs::read_to_string(run.join("histogram.tsv")).unwrap();
    assert_eq!(hist.lines().count(), 21);
    let total: usize = hist
        .lines()
        .skip(1)
        .map(|l| l.split('\t').nth(1).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 5);
    assert_eq!(fs::read_to_string(run.join("scores.tsv")).unwrap().lines().count(), 6);

    // A second, hand-written system scored under another label.
    let other = dir.path().join("other");
    let copy = dir.path().join("copy.txt");
    fs::copy(fixture("test.src"), &copy).unwrap();
    ok(&[
        "eval",
        "--system",
        p(&copy),
        "--eval",
        p(&fixture("test")),
        "--label",
        "identity",
        "--out",
        p(&other),
    ]);

    let report_dir = dir.path().join("report");
    let missing = dir.path().join("never-evaluated");
    ok(&["report", p(&run), p(&other), p(&missing), "--out", p(&report_dir)]);
    let rows: Vec<serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(report_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(rows.len(), 2 + LITERATURE_ROWS.len());
    assert!(rows[0]["sari"].as_f64() >= rows[1]["sari"].as_f64());
    let report = fs::read_to_string(report_dir.join("report.txt")).unwrap();
    assert!(report.contains("Sheang and Saggion (2021) 43.31 - - -"));
    assert!(report.contains("Štajner et al. (2022) 43.30 - - -"));
    assert!(!report.contains(VARIANT_ROWS[0].label));
}

#[test]
fn eval_rejects_line_count_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let short = dir.path().join("short.txt");
    fs::write(&short, "one line\n").unwrap();
    let out = sentsimp(&[
        "eval",
        "--system",
        p(&short),
        "--eval",
        p(&fixture("test")),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line count mismatch"), "{err}");
}
