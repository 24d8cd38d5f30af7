#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::DMatrix;

pub fn zipln(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zipln"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn ok(args: &[&str]) -> Output {
    let out = zipln(args);
    assert_eq!(code(&out), 0, "zipln {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Header, row ids and numeric cells of a CSV with a leading id column.
pub fn read_csv(path: &Path) -> (Vec<String>, Vec<String>, DMatrix<f64>) {
    let mut rdr = csv::Reader::from_path(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let header: Vec<String> = rdr.headers().unwrap().iter().skip(1).map(String::from).collect();
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        ids.push(rec[0].to_string());
        values.extend(rec.iter().skip(1).map(|c| c.parse::<f64>().unwrap()));
    }
    let m = DMatrix::from_row_slice(ids.len(), header.len(), &values);
    (header, ids, m)
}

pub fn matrix(path: &Path) -> DMatrix<f64> {
    read_csv(path).2
}

pub fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Contents of every file in a directory.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

/// Simulate into `dir/name` and return the directory.
pub fn simulate(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["simulate", "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

/// Fit simulated data with the one-hot covariates and no intercept.
pub fn fit_sim(sim: &Path, out: &Path, extra: &[&str]) -> Output {
    let counts = sim.join("counts.csv");
    let cov = sim.join("covariates.csv");
    let mut args = vec!["fit", s(&counts), "--covariates", s(&cov), "--formula", "0 + .", "--out", s(out)];
    args.extend_from_slice(extra);
    zipln(&args)
}
