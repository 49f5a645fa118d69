use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dualtrain_core::synth::{desk_corpus, DeskCorpusConfig};
use serde_json::Value;

fn dualtrain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualtrain"))
        .args(args)
        .env("DUALTRAIN_LOG", "warn")
        .output()
        .expect("spawn dualtrain")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small desk corpus; `empty_test` blanks out the test split.
fn small_corpus(dir: &Path, empty_test: bool) -> PathBuf {
    let bundle = desk_corpus(&DeskCorpusConfig {
        source_pairs: 300,
        target_passages: 80,
        target_questions: 80,
        dev_pairs: 20,
        test_pairs: 20,
        ..DeskCorpusConfig::default()
    })
    .unwrap();
    let manifest = bundle.write_to_dir(dir).unwrap();
    if empty_test {
        fs::write(dir.join(&manifest.test_pairs), "").unwrap();
    }
    dir.join("manifest.json")
}

fn meta(run: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(run.join("run_meta.json")).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&dualtrain(&["--help"])), 0);
    assert_eq!(code(&dualtrain(&["--version"])), 0);
    assert_eq!(code(&dualtrain(&["validate", "--no-such-flag"])), 1);

    let out = dualtrain(&["validate"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--out"), "{}", stderr(&out));

    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let out = dualtrain(&["validate", "--out", s(&run), "--threads", "0"]);
    assert_eq!(code(&out), 1);

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let out = dualtrain(&["validate", "--out", s(&run), "--config", s(&bad)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("invalid JSON"), "{}", stderr(&out));

    let out = dualtrain(&["validate", "--out", s(&run), "--accept-fraction", "1.5"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn run_directories_are_write_once() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = small_corpus(&tmp.path().join("corpus"), false);
    let run = tmp.path().join("run");
    let args = ["validate", "--corpus", s(&manifest), "--out", s(&run)];

    assert_eq!(code(&dualtrain(&args)), 0);
    let m = meta(&run);
    assert_eq!(m["command"], "validate");
    assert_eq!(m["status"], "ok");
    assert_eq!(m["seed"], m["config"]["seed"]);
    assert!(m["versions"]["dualtrain"].is_string());
    assert_eq!(m["outputs"], serde_json::json!(["validation.json"]));

    let again = dualtrain(&args);
    assert_eq!(code(&again), 1);
    assert!(stderr(&again).contains("--force"), "{}", stderr(&again));

    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(code(&dualtrain(&forced)), 0);

    // --force never removes a directory that is not a run directory.
    let stray = tmp.path().join("stray");
    fs::create_dir(&stray).unwrap();
    fs::write(stray.join("notes.txt"), "keep me").unwrap();
    let out = dualtrain(&[
        "validate",
        "--corpus",
        s(&manifest),
        "--out",
        s(&stray),
        "--force",
    ]);
    assert_eq!(code(&out), 1);
    assert!(stray.join("notes.txt").is_file());
}

#[test]
fn failed_runs_record_the_error() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = small_corpus(&tmp.path().join("corpus"), true);
    let base = tmp.path().join("base");
    let out = dualtrain(&[
        "train-baseline",
        "--corpus",
        s(&manifest),
        "--out",
        s(&base),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(base.join("generator.ckpt").is_file());
    assert!(!base.join("report.json").exists());

    let eval = tmp.path().join("eval");
    let out = dualtrain(&[
        "eval",
        "--split",
        "test",
        "--corpus",
        s(&manifest),
        "--models",
        s(&base),
        "--out",
        s(&eval),
    ]);
    assert_eq!(code(&out), 1);
    assert!(
        stderr(&out).contains("test split is empty"),
        "{}",
        stderr(&out)
    );
    let m = meta(&eval);
    assert_eq!(m["status"], "error");
    assert!(m["error"].as_str().unwrap().contains("test"));

    let dev = tmp.path().join("dev");
    let out = dualtrain(&[
        "eval",
        "--split",
        "dev",
        "--corpus",
        s(&manifest),
        "--models",
        s(&base),
        "--out",
        s(&dev),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dev.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["n_eval"], 20);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("B1,B2,B3,B4,M,R,R@1"));
}

#[test]
fn adapt_filter_and_report_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = small_corpus(&tmp.path().join("corpus"), false);
    let base = tmp.path().join("base");
    let out = dualtrain(&[
        "train-baseline",
        "--corpus",
        s(&manifest),
        "--out",
        s(&base),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let adapted = tmp.path().join("adapted");
    let out = dualtrain(&[
        "adapt",
        "--mode",
        "back",
        "--task",
        "both",
        "--iters",
        "1",
        "--corpus",
        s(&manifest),
        "--models",
        s(&base),
        "--out",
        s(&adapted),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in [
        "synthetic.jsonl",
        "history.json",
        "filter_report.json",
        "report.json",
    ] {
        assert!(adapted.join(f).is_file(), "missing {f}");
    }
    let history: Value =
        serde_json::from_str(&fs::read_to_string(adapted.join("history.json")).unwrap()).unwrap();
    assert_eq!(history["iterations"].as_array().unwrap().len(), 1);

    // The saved run_meta.json doubles as a config file.
    let filtered = tmp.path().join("filtered");
    let out = dualtrain(&[
        "filter",
        "--synthetic",
        s(&adapted.join("synthetic.jsonl")),
        "--filter",
        "cross",
        "--models",
        s(&adapted),
        "--config",
        s(&adapted.join("run_meta.json")),
        "--out",
        s(&filtered),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let lines: Vec<Value> = fs::read_to_string(filtered.join("synthetic.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    for task in ["qg", "ir"] {
        let set: Vec<&Value> = lines.iter().filter(|l| l["task"] == task).collect();
        let kept = set.iter().filter(|l| l["kept"] == true).count();
        assert_eq!(kept, (set.len() * 3).div_ceil(4), "{task}");
    }
    assert_eq!(
        meta(&filtered)["config"]["filter"]["kind"],
        "cross_consistency"
    );

    let table = tmp.path().join("table");
    let out = dualtrain(&["report", s(&base), s(&adapted), "--out", s(&table)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(table.join("report.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "run,B1,B2,B3,B4,M,R,R@1,R@10,R@20,R@40,R@100");
    assert!(rows[1].starts_with("base,") && rows[2].starts_with("adapted,"));
}
