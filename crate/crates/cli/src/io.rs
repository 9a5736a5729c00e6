//! File formats: mixture JSON, point CSV, result JSON, plan/trace CSV.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use gmmot_core::linalg::{Matrix, PsdMatrix};
use gmmot_core::mixture::{GaussianComponent, Gmm, PointCloud};

use crate::error::{CliError, CliResult};

/// Weight sums further than this from 1 are rejected.
const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;
/// Weight sums further than this from 1 are renormalized with a warning.
const WEIGHT_WARN_TOLERANCE: f64 = 1e-9;
/// Allowed asymmetry, relative to the largest entry (at least 1).
const SYMMETRY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGmm {
    d: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covs: Vec<Vec<Vec<f64>>>,
}

pub fn warn(msg: impl AsRef<str>) {
    eprintln!("warning: {}", msg.as_ref());
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))
}

/// Writes to `path`, or to stdout when no path is given.
pub fn write_output(path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| CliError::input(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| CliError::input(format!("cannot write to stdout: {e}")))
        }
    }
}

pub fn load_gmm(path: &Path) -> CliResult<Gmm> {
    parse_gmm(&read_text(path)?).map_err(|e| match e {
        CliError::Input(m) => CliError::Input(format!("{}: {m}", path.display())),
        CliError::Shape(m) => CliError::Shape(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_gmm(text: &str) -> CliResult<Gmm> {
    let raw: RawGmm = serde_json::from_str(text).map_err(|e| CliError::input(format!("malformed mixture JSON: {e}")))?;
    let (d, k) = (raw.d, raw.weights.len());
    if d == 0 {
        return Err(CliError::shape("\"d\" must be at least 1"));
    }
    if k == 0 {
        return Err(CliError::shape("mixture has no components"));
    }
    if raw.means.len() != k || raw.covs.len() != k {
        return Err(CliError::shape(format!(
            "{k} weights but {} means and {} covariances",
            raw.means.len(),
            raw.covs.len()
        )));
    }
    for (i, m) in raw.means.iter().enumerate() {
        if m.len() != d {
            return Err(CliError::shape(format!("mean {i} has length {}, expected {d}", m.len())));
        }
    }
    for (i, c) in raw.covs.iter().enumerate() {
        if c.len() != d || c.iter().any(|r| r.len() != d) {
            return Err(CliError::shape(format!("covariance {i} is not {d}x{d}")));
        }
    }

    if let Some(w) = raw.weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(CliError::input(format!("weights must be finite and nonnegative, got {w}")));
    }
    let sum: f64 = raw.weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(CliError::input(format!("weights sum to {sum}, expected 1")));
    }
    if (sum - 1.0).abs() > WEIGHT_WARN_TOLERANCE {
        warn(format!("weights sum to {sum}; renormalizing"));
    }

    let mut components = Vec::with_capacity(k);
    for (i, (mean, rows)) in raw.means.into_iter().zip(raw.covs).enumerate() {
        let scale = rows.iter().flatten().fold(1.0f64, |m, x| m.max(x.abs()));
        for r in 0..d {
            for c in (r + 1)..d {
                if (rows[r][c] - rows[c][r]).abs() > SYMMETRY_TOLERANCE * scale {
                    return Err(CliError::input(format!("covariance {i} is not symmetric at ({r}, {c})")));
                }
            }
        }
        let cov = PsdMatrix::from_rows(&rows).map_err(|e| CliError::input(format!("covariance {i}: {e}")))?;
        components.push(GaussianComponent::new(mean, cov).map_err(|e| CliError::input(format!("component {i}: {e}")))?);
    }
    Ok(Gmm::new(raw.weights, components)?)
}

fn push_num(out: &mut String, x: f64) {
    // 17 significant digits round-trip every f64.
    let _ = write!(out, "{x:.16e}");
}

fn push_row(out: &mut String, row: &[f64]) {
    out.push('[');
    for (i, &x) in row.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        push_num(out, x);
    }
    out.push(']');
}

/// Canonical mixture JSON: fixed key order, 17 significant digits.
pub fn gmm_to_json(mu: &Gmm) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{{\n  \"d\": {},", mu.dim());
    out.push_str("  \"weights\": ");
    push_row(&mut out, mu.weights());
    out.push_str(",\n  \"means\": [");
    for (k, c) in mu.components().iter().enumerate() {
        out.push_str(if k == 0 { "\n    " } else { ",\n    " });
        push_row(&mut out, c.mean());
    }
    out.push_str("\n  ],\n  \"covs\": [");
    for (k, c) in mu.components().iter().enumerate() {
        out.push_str(if k == 0 { "\n    [" } else { ",\n    [" });
        for (r, row) in c.cov().as_sym().to_rows().iter().enumerate() {
            if r > 0 {
                out.push_str(", ");
            }
            push_row(&mut out, row);
        }
        out.push(']');
    }
    out.push_str("\n  ]\n}\n");
    out
}

/// Reorders components by descending weight (stable for ties).
pub fn sort_by_weight(mu: &Gmm) -> CliResult<Gmm> {
    let mut order: Vec<usize> = (0..mu.len()).collect();
    order.sort_by(|&a, &b| mu.weights()[b].total_cmp(&mu.weights()[a]));
    let weights = order.iter().map(|&k| mu.weights()[k]).collect();
    let comps = order.iter().map(|&k| mu.component(k).clone()).collect();
    Ok(Gmm::new(weights, comps)?)
}

/// Point CSV options.
#[derive(Debug, Clone, Copy, Default)]
pub struct PointsOptions {
    /// Treat the last column as weights even without a `weight` header.
    pub weights: bool,
    /// Rescale weights to sum to 1 instead of requiring it.
    pub normalize: bool,
}

/// Reads a point CSV. The first row is a header exactly when none of its
/// cells parse as numbers. A trailing column named `weight` (or any
/// trailing column with `weights` set) holds nonnegative point weights.
pub fn load_points(path: &Path, opts: PointsOptions) -> CliResult<PointCloud> {
    let text = read_text(path)?;
    parse_points(&text, opts).map_err(|e| match e {
        CliError::Input(m) => CliError::Input(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_points(text: &str, opts: PointsOptions) -> CliResult<PointCloud> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::input(format!("malformed CSV: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        records.push((line, rec));
    }
    let parse = |s: &str| s.parse::<f64>().ok().filter(|x| x.is_finite());

    let mut weight_column = opts.weights;
    let mut start = 0;
    if let Some((_, first)) = records.first() {
        if first.iter().all(|c| parse(c).is_none()) {
            start = 1;
            if first.iter().next_back().is_some_and(|h| h.eq_ignore_ascii_case("weight")) {
                weight_column = true;
            }
        }
    }
    let rows = &records[start..];
    if rows.is_empty() {
        return Err(CliError::input("no data rows"));
    }
    let ncols = rows[0].1.len();
    let d = if weight_column { ncols.saturating_sub(1) } else { ncols };
    if d == 0 {
        return Err(CliError::input("need at least one coordinate column"));
    }

    let mut points = Vec::with_capacity(rows.len() * d);
    let mut weights = Vec::new();
    for (line, rec) in rows {
        if rec.len() != ncols {
            return Err(CliError::input(format!("row {line}: {} columns, expected {ncols}", rec.len())));
        }
        for (c, cell) in rec.iter().enumerate() {
            let x = parse(cell).ok_or_else(|| CliError::input(format!("row {line}, column {}: cannot parse {cell:?} as a finite number", c + 1)))?;
            if c < d {
                points.push(x);
            } else {
                if x < 0.0 {
                    return Err(CliError::input(format!("row {line}, column {}: negative weight {x}", c + 1)));
                }
                weights.push(x);
            }
        }
    }
    let weights = if weight_column {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) {
            return Err(CliError::input("point weights sum to zero"));
        }
        if !opts.normalize && (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(CliError::input(format!("point weights sum to {sum}; pass --normalize to rescale")));
        }
        Some(weights)
    } else {
        None
    };
    Ok(PointCloud::new(d, points, weights)?)
}

#[derive(Debug, Serialize)]
pub struct ResultFile {
    pub metric: String,
    pub value: f64,
    pub squared: f64,
    pub stderr: f64,
    pub slices: usize,
    pub seed: u64,
    pub elapsed_ms: f64,
    pub version: String,
}

pub fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(format!("cannot serialize output: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// A matrix as headerless CSV, one row per line.
pub fn matrix_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for r in 0..m.rows() {
        for (c, x) in m.row(r).iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            push_num(&mut out, *x);
        }
        out.push('\n');
    }
    out
}

/// Loss traces as `restart,step,loss` rows.
pub fn trace_csv(traces: &[Vec<f64>]) -> String {
    let mut out = String::from("restart,step,loss\n");
    for (r, trace) in traces.iter().enumerate() {
        for (s, loss) in trace.iter().enumerate() {
            let _ = write!(out, "{r},{s},");
            push_num(&mut out, *loss);
            out.push('\n');
        }
    }
    out
}
