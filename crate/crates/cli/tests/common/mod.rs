#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub const TOY: &[&str] = &[
    "--k",
    "4",
    "--edgeconv-channels",
    "16,16",
    "--embedding-dim",
    "32",
    "--fc-channels",
    "16,8",
    "--dropout",
    "0",
];

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_regdgcnn"));
    c.env("RUST_LOG", "warn");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn regdgcnn")
}

pub fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "regdgcnn {args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synthetic designs plus cached clouds under `dir`.
pub fn fixture(dir: &Path, count: usize, points: usize) {
    run_ok(&["synth", "--out-dir", p(dir), "--count", &count.to_string()]);
    let stl = dir.join("stl");
    let cache = dir.join("cache");
    let manifest = dir.join("manifest.csv");
    run_ok(&[
        "sample",
        "--stl-dir",
        p(&stl),
        "--cache-dir",
        p(&cache),
        "--manifest",
        p(&manifest),
        "--points",
        &points.to_string(),
    ]);
}

pub fn csv_rows(text: &str) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}
