//! Command-line behaviour: outputs of a small pipeline and error reporting.

use std::path::Path;
use std::process::{Command, Output};

fn shapekit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapekit")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = shapekit(args);
    assert!(out.status.success(), "shapekit {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = shapekit(args);
    assert!(!out.status.success(), "shapekit {args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn extract_then_reconstruct_recovers_the_template() {
    let dir = tempfile::tempdir().unwrap();
    let toy = dir.path().join("toy");
    ok(&["make-toy", "--parts", "5", "--verts-per-part", "16", "--out", s(&toy)]);
    std::fs::write(dir.path().join("zero.csv"), "0,0,0,0,0,0,0,0,0,0\n").unwrap();
    ok(&["extract", "--model", s(&toy), "--beta", s(&dir.path().join("zero.csv")), "--n", "2", "--out", s(&dir.path().join("d.json"))]);
    let desc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("d.json")).unwrap()).unwrap();
    assert_eq!(desc["n"], 2);
    let widths = desc["slice_widths"].as_array().unwrap();
    assert_eq!(widths.len(), 5);
    assert!(widths.iter().all(|part| part.as_array().unwrap().len() == 2));
    ok(&["reconstruct", "--model", s(&toy), "--descriptor", s(&dir.path().join("d.json")), "--out", s(&dir.path().join("b.csv"))]);
    let beta: Vec<f64> = std::fs::read_to_string(dir.path().join("b.csv"))
        .unwrap()
        .trim()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(beta.len(), 10);
    assert!(beta.iter().all(|b| b.abs() < 1e-6), "{beta:?}");
}

#[test]
fn eval_noise_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let toy = dir.path().join("toy");
    ok(&["make-toy", "--parts", "4", "--verts-per-part", "16", "--out", s(&toy)]);
    let stdout = ok(&["eval-noise", "--model", s(&toy), "--algorithms", "analytical", "--ratios", "0,0.05", "--num-shapes", "8", "--out", s(&dir.path().join("r.csv"))]);
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(stdout, csv);
    assert_eq!(csv.lines().count(), 3);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(json["cells"].as_array().unwrap().len(), 2);
}

#[test]
fn bad_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let toy = dir.path().join("toy");
    ok(&["make-toy", "--parts", "4", "--verts-per-part", "16", "--out", s(&toy)]);
    std::fs::write(dir.path().join("short.csv"), "0.1,0.2\n").unwrap();
    let err = fails(&["extract", "--model", s(&toy), "--beta", s(&dir.path().join("short.csv")), "--out", s(&dir.path().join("d.json"))]);
    assert!(err.contains("short.csv"), "{err}");
    fails(&["extract", "--model", s(&dir.path().join("missing")), "--beta", s(&dir.path().join("short.csv")), "--out", s(&dir.path().join("d.json"))]);
    fails(&["augment", "--model", s(&toy), "--beta", "x.csv", "--cam", "1,2", "--aug", "1,1,0", "--sbar", "1", "--out", "a.json"]);
    fails(&["make-toy", "--parts", "1", "--out", s(&dir.path().join("t1"))]);
    fails(&["eval-noise", "--model", s(&toy), "--algorithms", "magic", "--out", s(&dir.path().join("r"))]);
}

#[test]
fn refiner_must_match_the_descriptor_layout() {
    let dir = tempfile::tempdir().unwrap();
    let toy = dir.path().join("toy");
    ok(&["make-toy", "--parts", "4", "--verts-per-part", "16", "--out", s(&toy)]);
    ok(&["train-refiner", "--model", s(&toy), "--n", "2", "--samples", "32", "--iterations", "4", "--batch", "8", "--hidden", "8", "--out", s(&dir.path().join("net.bin"))]);
    std::fs::write(dir.path().join("b.csv"), "0.5,0,0,0,0,0,0,0,0,0\n").unwrap();
    ok(&["extract", "--model", s(&toy), "--beta", s(&dir.path().join("b.csv")), "--n", "3", "--out", s(&dir.path().join("d.json"))]);
    fails(&["reconstruct", "--model", s(&toy), "--descriptor", s(&dir.path().join("d.json")), "--refiner", s(&dir.path().join("net.bin")), "--out", s(&dir.path().join("o.csv"))]);
}
