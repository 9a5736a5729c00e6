#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use gmmot_core::mixture::{GaussianComponent, Gmm, PointCloud};

pub struct Run {
    pub code: i32,
    pub stdout: Vec<u8>,
    pub stderr: String,
}

impl Run {
    pub fn stdout_str(&self) -> String {
        String::from_utf8(self.stdout.clone()).expect("stdout is UTF-8")
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", self.stdout_str()))
    }
}

pub fn run_env(args: &[&str], env: &[(&str, &str)]) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gmmot"));
    cmd.args(args).env_remove("GMMOT_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    Run { code: out.status.code().unwrap_or(-1), stdout: out.stdout, stderr: String::from_utf8_lossy(&out.stderr).into_owned() }
}

pub fn run(args: &[&str]) -> Run {
    run_env(args, &[])
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("UTF-8 path")
}

pub fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, contents).unwrap();
    p
}

/// Plain (non-canonical) mixture JSON, as a user would write it.
pub fn gmm_json(mu: &Gmm) -> String {
    let covs: Vec<Vec<Vec<f64>>> = mu.components().iter().map(|c| c.cov().as_sym().to_rows()).collect();
    let means: Vec<&[f64]> = mu.components().iter().map(GaussianComponent::mean).collect();
    serde_json::json!({"d": mu.dim(), "weights": mu.weights(), "means": means, "covs": covs}).to_string()
}

pub fn write_gmm(dir: &Path, name: &str, mu: &Gmm) -> PathBuf {
    write(dir, name, &gmm_json(mu))
}

pub fn points_csv(pc: &PointCloud) -> String {
    let mut out = (0..pc.dim()).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for i in 0..pc.len() {
        out.push_str(&pc.point(i).iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

pub fn load(path: &Path) -> Gmm {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    value_to_gmm(&v)
}

pub fn value_to_gmm(v: &serde_json::Value) -> Gmm {
    let floats = |x: &serde_json::Value| -> Vec<f64> { x.as_array().unwrap().iter().map(|y| y.as_f64().unwrap()).collect() };
    let weights = floats(&v["weights"]);
    let comps = v["means"]
        .as_array()
        .unwrap()
        .iter()
        .zip(v["covs"].as_array().unwrap())
        .map(|(m, c)| {
            let rows: Vec<Vec<f64>> = c.as_array().unwrap().iter().map(floats).collect();
            GaussianComponent::new(floats(m), gmmot_core::linalg::PsdMatrix::from_rows(&rows).unwrap()).unwrap()
        })
        .collect();
    Gmm::new(weights, comps).unwrap()
}

/// Drops the timing field, the only run-to-run difference allowed in a result file.
pub fn without_timing(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).lines().filter(|l| !l.trim_start().starts_with("\"elapsed_ms\"")).collect::<Vec<_>>().join("\n")
}
