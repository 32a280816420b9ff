use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dsc_loopfilter::io::save_weights;
use dsc_loopfilter::network::build_student;

fn dscf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dscf")).args(args).current_dir(dir).output().unwrap()
}

fn setup(dir: &Path) {
    let out = dscf(dir, &["synth", "--out", "eval.yuv", "--width", "48", "--height", "40", "--frames", "2", "--seed", "4"]);
    assert!(out.status.success());
    save_weights(&dir.join("w.dscf"), &build_student::<f32>(2).fold_bn().unwrap()).unwrap();
    fs::write(
        dir.join("cfg.json"),
        r#"{"seed": 1, "dataset": {"eval": ["eval.yuv"], "width": 48, "height": 40}, "filter": {"weights": "w.dscf"}}"#,
    )
    .unwrap();
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn filter_and_eval_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    for sub in ["a", "b"] {
        assert!(dscf(dir, &["filter", "--config", "cfg.json", "--qp", "32", "--out", sub]).status.success());
        assert!(dscf(dir, &["eval", "--config", "cfg.json", "--mode", "cnn+ctu-control", "--out", sub]).status.success());
    }
    let a = read_dir_sorted(&dir.join("a"));
    assert_eq!(a, read_dir_sorted(&dir.join("b")));
    let names: Vec<_> = a.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["eval.json", "eval.txt", "filtered.yuv", "metrics.json", "metrics.txt", "stream.dscb"]);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    assert_eq!(dscf(dir, &["filter", "--config", "missing.json"]).status.code(), Some(2));
    assert_eq!(dscf(dir, &["filter", "--config", "cfg.json", "--mode", "sharpen"]).status.code(), Some(2));
    assert_eq!(dscf(dir, &["filter", "--config", "cfg.json", "--qp", "60"]).status.code(), Some(2));
    assert_eq!(dscf(dir, &["frobnicate"]).status.code(), Some(2));
    fs::write(dir.join("bad.json"), r#"{"dataset": {"width": 48, "height": 40}, "colour": 1}"#).unwrap();
    assert_eq!(dscf(dir, &["filter", "--config", "bad.json"]).status.code(), Some(2));
    // Data errors.
    fs::write(dir.join("eval.yuv"), [0u8; 100]).unwrap();
    assert_eq!(dscf(dir, &["filter", "--config", "cfg.json"]).status.code(), Some(3));
    assert_eq!(dscf(dir, &["fold", "--weights", "w.dscf", "--out", "f.dscf"]).status.code(), Some(3));
    fs::write(dir.join("junk.dscf"), b"not weights").unwrap();
    assert_eq!(dscf(dir, &["analyze", "--weights", "junk.dscf"]).status.code(), Some(3));
}

#[test]
fn analyze_reports_student_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dscf(tmp.path(), &["analyze"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("Sum 11,114"));
    assert!(text.contains("MACs per pixel: 10,825"));
}
