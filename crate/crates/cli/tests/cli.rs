use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_morphoprobe")).current_dir(dir).env("MORPHOPROBE_WORKERS", "1").args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const CONFIG: &str = r#"{
  "suite": { "perturbations": ["ORIGINAL", "TARG", "L1"], "n_seeds": 1, "pooling": "last", "shapley_mode": "fixed_probe" },
  "sampler": { "n_train": 100, "n_dev": 20, "n_test": 20, "min_class_count": 20, "min_sentences": 50 },
  "train": { "batch_size": 16, "max_epochs": 5, "patience": 2, "lr": 0.01 },
  "models": [ { "id": "rnd", "backend": { "kind": "random_control", "mode": "fully_random", "n_layers": 2, "dim": 8, "seed": 3 } } ],
  "seed": 4
}"#;

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("config.json"), CONFIG).unwrap();
    let treebank = repo().join("fixtures/ud/fx_toy");
    ok(dir.path(), &["--config", "config.json", "ingest", "--lang", "fx", "--treebank", treebank.to_str().unwrap()]);
    ok(dir.path(), &["--config", "config.json", "sample", "--lang", "fx", "--pos", "NOUN", "--feature", "Number"]);
    dir
}

#[test]
fn help_and_version_succeed() {
    let dir = tempfile::tempdir().unwrap();
    for flag in ["--help", "--version"] {
        assert_eq!(run(dir.path(), &[flag]).status.code(), Some(0));
    }
    assert!(ok(dir.path(), &["analyze", "--help"]).contains("--effects"));
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["--bogus"][..], &["ingest", "--lang", "xx"], &["sample", "--lang", "xx", "--pos", "NOUN"], &["analyze"]] {
        assert_eq!(run(dir.path(), args).status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn data_errors_exit_2_and_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 3] = [&["--config", "missing.json", "report"], &["ingest", "--lang", "xx", "--treebank", "no/such/dir"], &["sample", "--lang", "zz"]];
    for (args, needle) in cases.iter().zip(["missing.json", "no/such/dir", "corpus.jsonl"]) {
        let out = run(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains(needle), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    std::fs::write(dir.path().join("bad.json"), "{ not json").unwrap();
    assert_eq!(run(dir.path(), &["--config", "bad.json", "report"]).status.code(), Some(2));
}

#[test]
fn malformed_treebank_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let tb = dir.path().join("tb");
    std::fs::create_dir(&tb).unwrap();
    std::fs::write(tb.join("xx_tb-ud-train.conllu"), "1\tonly\ttwo\n\n").unwrap();
    let out = run(dir.path(), &["ingest", "--lang", "xx", "--treebank", "tb"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("xx_tb-ud-train.conllu"));
}

#[test]
fn rerunning_a_finished_suite_trains_nothing() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["--config", "config.json", "perturb"]);
    let journal = d.join("out/journal.jsonl");
    let lines = std::fs::read_to_string(&journal).unwrap().lines().count();
    // Three perturbations, each a start and a done record.
    assert_eq!(lines, 6);
    let rows = std::fs::read(d.join("out/perturb/rows.json")).unwrap();
    ok(d, &["--config", "config.json", "perturb"]);
    assert_eq!(std::fs::read_to_string(&journal).unwrap().lines().count(), lines);
    assert_eq!(std::fs::read(d.join("out/perturb/rows.json")).unwrap(), rows);
    // `train` is the ORIGINAL run, so it too is already journaled.
    ok(d, &["--config", "config.json", "train"]);
    assert_eq!(std::fs::read_to_string(&journal).unwrap().lines().count(), lines);
}

#[test]
fn report_is_reproducible() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["--config", "config.json", "perturb"]);
    ok(d, &["--config", "config.json", "analyze", "--effects"]);
    ok(d, &["--config", "config.json", "report"]);
    let snapshot = |p: &Path| -> Vec<(String, Vec<u8>)> {
        let mut v: Vec<_> = std::fs::read_dir(p).unwrap().map(|e| e.unwrap().path()).map(|f| (f.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&f).unwrap())).collect();
        v.sort();
        v
    };
    let first = snapshot(&d.join("out/report"));
    assert!(first.iter().any(|(n, _)| n == "results.csv"));
    std::fs::remove_dir_all(d.join("out/report")).unwrap();
    ok(d, &["--config", "config.json", "report"]);
    assert_eq!(snapshot(&d.join("out/report")), first);
}

#[test]
fn plan_writes_a_manifest_for_the_sidecar() {
    let dir = workspace();
    let d = dir.path();
    let out = ok(d, &["--config", "config.json", "plan", "--suite", "perturb", "--model", "xlmr", "--out", "plan.json"]);
    assert!(out.contains("requests for xlmr"));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("plan.json")).unwrap()).unwrap();
    assert_eq!(manifest["model_id"], "xlmr");
}
