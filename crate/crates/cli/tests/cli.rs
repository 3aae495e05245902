use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attnexplain"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
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

fn small_corpus(dir: &Path) -> String {
    let out = dir.join("corpus");
    ok(&[
        "synth",
        "--out",
        p(&out),
        "--matrices",
        "12",
        "--grid-rows",
        "24",
        "--grid-cols",
        "8",
        "--silence-prefix",
        "4",
        "--seed",
        "5",
    ]);
    p(&out.join("manifest.json")).to_string()
}

#[test]
fn stages_chain_through_files() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let manifest = small_corpus(dir);
    assert!(dir.join("corpus/truth.json").exists());

    let q = dir.join("q");
    ok(&["quantize", "--manifest", &manifest, "--out", p(&q)]);
    let b = dir.join("b");
    ok(&[
        "build",
        "--input",
        p(&q.join("levels.json")),
        "--out",
        p(&b),
        "--p",
        "2",
        "--feature-mode",
        "column-window",
        "--seed",
        "1",
    ]);
    let train_rows = fs::read_to_string(b.join("train.csv"))
        .unwrap()
        .lines()
        .count();
    let eval_rows = fs::read_to_string(b.join("eval.csv"))
        .unwrap()
        .lines()
        .count();
    // 12 matrices x 24 rows x 8 cols, split 80/20.
    assert_eq!(train_rows + eval_rows, 12 * 24 * 8);
    assert_eq!(train_rows, (0.8 * (12 * 24 * 8) as f64) as usize);

    let t = dir.join("t");
    ok(&[
        "train",
        "--train",
        p(&b.join("train.csv")),
        "--eval",
        p(&b.join("eval.csv")),
        "--out",
        p(&t),
        "--trees",
        "5",
        "--min-leaf",
        "4",
    ]);
    let evaluation: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(t.join("evaluation.json")).unwrap()).unwrap();
    let acc = evaluation["overall_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let e = dir.join("e");
    ok(&[
        "explain",
        "--forest",
        p(&t.join("forest.json")),
        "--meta",
        p(&b.join("dataset.json")),
        "--out",
        p(&e),
    ]);
    let table: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(e.join("explanation.json")).unwrap()).unwrap();
    assert_eq!(table["per_interval"].as_array().unwrap().len(), 2);
}

#[test]
fn quantize_reuses_boundaries() {
    let tmp = TempDir::new().unwrap();
    let manifest = small_corpus(tmp.path());
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");
    ok(&["quantize", "--manifest", &manifest, "--out", p(&first)]);
    ok(&[
        "quantize",
        "--manifest",
        &manifest,
        "--out",
        p(&second),
        "--boundaries",
        p(&first.join("boundaries.json")),
    ]);
    assert_eq!(
        fs::read(first.join("levels.json")).unwrap(),
        fs::read(second.join("levels.json")).unwrap()
    );
}

#[test]
fn pipeline_writes_report_and_figures() {
    let tmp = TempDir::new().unwrap();
    let manifest = small_corpus(tmp.path());
    let out = tmp.path().join("run");
    let stdout = ok(&[
        "pipeline",
        "--manifest",
        &manifest,
        "--out",
        p(&out),
        "--p",
        "1,2,3",
        "--trees",
        "4",
        "--min-leaf",
        "4",
        "--feature-mode",
        "column-window",
        "--seed",
        "9",
    ]);
    assert!(stdout.contains("p=3"));
    for name in [
        "report.json",
        "timings.json",
        "fig1_row_accuracy.csv",
        "fig2_level_distribution.csv",
        "fig3_accuracy_vs_p.csv",
        "fig4_condition_frequencies.csv",
        "fig5_influence_by_interval.csv",
    ] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    let fig3 = fs::read_to_string(out.join("fig3_accuracy_vs_p.csv")).unwrap();
    assert_eq!(fig3.lines().count(), 1 + 3);
}

#[test]
fn failures_exit_nonzero_with_stage_tag() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("absent.json");
    let out = run(&[
        "pipeline",
        "--manifest",
        p(&missing),
        "--out",
        p(tmp.path()),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("pipeline") && err.contains("load"), "{err}");

    let manifest = small_corpus(tmp.path());
    let out = run(&[
        "pipeline",
        "--manifest",
        &manifest,
        "--out",
        p(tmp.path()),
        "--p",
        "0",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("config stage"));

    let out = run(&["build", "--input", p(&missing), "--out", p(tmp.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: build"));
}

#[test]
fn grid_override_rejects_oversized_matrices() {
    let tmp = TempDir::new().unwrap();
    let manifest = small_corpus(tmp.path());
    let out = run(&[
        "quantize",
        "--manifest",
        &manifest,
        "--out",
        p(&tmp.path().join("q")),
        "--grid-cols",
        "4",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("quantize"));
}
