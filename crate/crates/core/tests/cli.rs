use std::path::Path;
use std::process::{Command, Output};

use casefold::corpus::{parse_column_corpus, write_column_corpus};
use casefold::synthetic;

fn casefold(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_casefold")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn pos_files(dir: &Path) {
    let (train, dev, test) = synthetic::pos_splits(30, 8, 8, 2);
    std::fs::write(dir.join("train.txt"), write_column_corpus(&train)).unwrap();
    std::fs::write(dir.join("dev.txt"), write_column_corpus(&dev)).unwrap();
    std::fs::write(dir.join("test.txt"), write_column_corpus(&test)).unwrap();
}

fn text_files(dir: &Path) {
    let lines = |n, seed| -> String {
        synthetic::truecase_corpus(n, seed).iter().map(|s| s.text() + "\n").collect()
    };
    std::fs::write(dir.join("tc_train.txt"), lines(20, 1)).unwrap();
    std::fs::write(dir.join("tc_dev.txt"), lines(5, 2)).unwrap();
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = casefold(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn missing_seed_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    pos_files(d.path());
    let o = casefold(&["flavor", "--train", p(&d.path().join("train.txt")), "--test", p(&d.path().join("test.txt")), "--kind", "c", "--out", p(&d.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn flavor_writes_train_tests_and_manifest() {
    let d = tempfile::tempdir().unwrap();
    pos_files(d.path());
    let train_path = d.path().join("train.txt");
    let before = std::fs::read(&train_path).unwrap();
    let out = d.path().join("out");
    let o = casefold(&["flavor", "--train", p(&train_path), "--test", p(&d.path().join("test.txt")), "--kind", "cu50", "--seed", "7", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["train.cu50", "test.c", "test.u", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(std::fs::read(&train_path).unwrap(), before);
    let written = parse_column_corpus(&std::fs::read_to_string(out.join("train.cu50")).unwrap(), 0, 1).unwrap();
    assert_eq!(written.len(), 30);
    let lowered = written.iter().filter(|s| s.text() == s.text().to_lowercase()).count();
    assert_eq!(lowered, 15);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "flavor");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config"]["kind"], "cu50");
    assert!(manifest["wall_time_secs"].is_number());
    assert!(manifest["version"].is_string());

    let again = d.path().join("again");
    casefold(&["flavor", "--train", p(&train_path), "--test", p(&d.path().join("test.txt")), "--kind", "cu50", "--seed", "7", "--out", p(&again)]);
    assert_eq!(std::fs::read(out.join("train.cu50")).unwrap(), std::fs::read(again.join("train.cu50")).unwrap());
}

#[test]
fn truecased_flavor_needs_a_truecaser() {
    let d = tempfile::tempdir().unwrap();
    pos_files(d.path());
    let o = casefold(&["flavor", "--train", p(&d.path().join("train.txt")), "--test", p(&d.path().join("test.txt")), "--kind", "tt", "--seed", "1", "--out", p(&d.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("needs a truecaser"), "{}", stderr(&o));
}

#[test]
fn malformed_corpus_is_a_data_error_naming_file_and_line() {
    let d = tempfile::tempdir().unwrap();
    let bad = d.path().join("bad.txt");
    std::fs::write(&bad, "The DT\ncat\n").unwrap();
    let o = casefold(&["flavor", "--train", p(&bad), "--test", p(&bad), "--kind", "c", "--seed", "1", "--out", p(&d.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("bad.txt") && msg.contains("line 2"), "{msg}");
}

#[test]
fn truecaser_train_apply_eval() {
    let d = tempfile::tempdir().unwrap();
    text_files(d.path());
    let model = d.path().join("tc.bin");
    let train_args = |out: &Path| {
        casefold(&[
            "train-truecaser", "--train", p(&d.path().join("tc_train.txt")), "--dev", p(&d.path().join("tc_dev.txt")),
            "--out", p(out), "--seed", "3", "--hidden-size", "8", "--layers", "1", "--epochs", "2", "--batch-size", "5",
            "--oov", "stochastic",
        ])
    };
    let o = train_args(&model);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(d.path().join("tc.bin.manifest.json").exists());
    let twin = d.path().join("tc2.bin");
    train_args(&twin);
    assert_eq!(std::fs::read(&model).unwrap(), std::fs::read(&twin).unwrap());

    let applied = d.path().join("applied.txt");
    let o = casefold(&["apply-truecaser", "--model", p(&model), "--in", p(&d.path().join("tc_dev.txt")), "--out", p(&applied)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let src = std::fs::read_to_string(d.path().join("tc_dev.txt")).unwrap();
    let out = std::fs::read_to_string(&applied).unwrap();
    assert_eq!(out.to_lowercase(), src.to_lowercase());

    let o = casefold(&["eval-truecaser", "--model", p(&model), "--gold", p(&d.path().join("tc_dev.txt"))]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = String::from_utf8(o.stdout).unwrap();
    let (_, frac) = line.trim().split_once('.').unwrap();
    assert_eq!(frac.len(), 2, "{line}");

    let o = casefold(&["--json", "eval-truecaser", "--model", p(&model), "--gold", p(&d.path().join("tc_dev.txt"))]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["f1"].is_number() && v["tp"].is_number());
}

#[test]
fn tagger_train_and_eval() {
    let d = tempfile::tempdir().unwrap();
    pos_files(d.path());
    let model = d.path().join("tagger.bin");
    let o = casefold(&[
        "train-tagger", "--train", p(&d.path().join("train.txt")), "--dev", p(&d.path().join("dev.txt")), "--flavor", "cu",
        "--head", "softmax", "--embeddings", "trainable:8", "--hidden", "8", "--max-epochs", "2", "--seed", "4", "--out", p(&model),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("tagger.bin.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["flavor"], "cu");
    assert_eq!(manifest["config"]["tagger"]["head"], "softmax");

    let o = casefold(&["--json", "eval-tagger", "--model", p(&model), "--test", p(&d.path().join("test.txt")), "--metric", "acc"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["metric"], "acc");
    let score = v["score"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&score));

    let o = casefold(&["eval-tagger", "--model", p(&model), "--test", p(&d.path().join("test.txt")), "--metric", "bleu"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn exploding_learning_rate_is_a_numeric_failure() {
    let d = tempfile::tempdir().unwrap();
    pos_files(d.path());
    let o = casefold(&[
        "train-tagger", "--train", p(&d.path().join("train.txt")), "--dev", p(&d.path().join("dev.txt")), "--flavor", "c",
        "--embeddings", "trainable:4", "--hidden", "4", "--max-epochs", "3", "--learning-rate", "1e300", "--seed", "1",
        "--out", p(&d.path().join("m.bin")),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn config_errors() {
    let d = tempfile::tempdir().unwrap();
    pos_files(d.path());
    let cfg = d.path().join("x.cfg");
    std::fs::write(&cfg, "train = train.txt\ndev = dev.txt\ntest = test.txt\n").unwrap();
    let o = casefold(&["flavor-matrix", "--config", p(&cfg), "--out", p(&d.path().join("r.tsv"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
    std::fs::write(&cfg, "train = nowhere.txt\ndev = dev.txt\ntest = test.txt\nseed = 1\n").unwrap();
    let o = casefold(&["flavor-matrix", "--config", p(&cfg), "--out", p(&d.path().join("r.tsv"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.txt"), "{}", stderr(&o));
}

#[test]
fn reproduce_tables_writes_each_requested_table() {
    let d = tempfile::tempdir().unwrap();
    pos_files(d.path());
    std::fs::write(
        d.path().join("t.cfg"),
        "train = train.txt\ndev = dev.txt\ntest = test.txt\nflavors = c, cu\nseed = 5\n\
         tagger.hidden = 4\ntagger.embeddings = trainable:4\ntagger.max_epochs = 1\n\
         tables = matrix, crf-ablation, encodings\nencodings = trainable:4, trainable:6\n",
    )
    .unwrap();
    let out = d.path().join("tables");
    let o = casefold(&["--json", "reproduce-tables", "--config", p(&d.path().join("t.cfg")), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let matrix = std::fs::read_to_string(out.join("flavor_matrix.tsv")).unwrap();
    assert!(matrix.starts_with("flavor\ttest_c\ttest_u\tavg\nC\t"));
    assert_eq!(matrix.lines().count(), 3);
    let ablation = std::fs::read_to_string(out.join("crf_ablation.tsv")).unwrap();
    let lines: Vec<&str> = ablation.lines().collect();
    assert_eq!(lines[0], "flavor\tNo CRF\tCRF");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("C+U\t"));
    let enc = std::fs::read_to_string(out.join("encodings.tsv")).unwrap();
    assert!(enc.starts_with("flavor\ttrainable:4\ttrainable:6\n"));
    assert!(out.join("manifest.json").exists());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["crf_ablation"]["c.CRF"].is_number());
}
