use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;

use gmmot_core::analysis::{bench, detect_clusters, BenchConfig, BenchMetric, ClusterConfig, ClusterMetric, SystemClock, BENCH_CSV_HEADER};
use gmmot_core::distances::{dsmw, gaussian_w2, msw, msw_plan, mw, mw_plan, smw, sw_gmm, DistanceValue, SliceSet, DEFAULT_QUAD_NODES};
use gmmot_core::mixture::{density_grid, em_fit, EmConfig, Gmm};
use gmmot_core::optimize::{barycenter_fixed, barycenter_free, quantize, FixedConfig, GaussianBarycenterConfig, OptimConfig, OptimReport};

use crate::error::{CliError, CliResult};
use crate::io::{gmm_to_json, load_gmm, load_points, matrix_csv, sort_by_weight, to_json, trace_csv, warn, write_output, PointsOptions, ResultFile};

const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Simplex sums further than this from 1 are rejected.
const LAMBDA_TOLERANCE: f64 = 1e-6;

/// Accepts a nonnegative integer or `random` (drawn from the OS and echoed
/// to stderr so the run can be repeated).
pub fn parse_seed(s: &str) -> Result<u64, String> {
    if s == "random" {
        let seed = rand::random();
        eprintln!("seed: {seed}");
        return Ok(seed);
    }
    s.parse().map_err(|_| format!("expected a nonnegative integer or \"random\", got {s:?}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistanceMetric {
    Mw,
    Msw,
    Smw,
    Dsmw,
    SwGmm,
    GaussW2,
}

impl DistanceMetric {
    fn name(self) -> &'static str {
        match self {
            DistanceMetric::Mw => "mw",
            DistanceMetric::Msw => "msw",
            DistanceMetric::Smw => "smw",
            DistanceMetric::Dsmw => "dsmw",
            DistanceMetric::SwGmm => "sw-gmm",
            DistanceMetric::GaussW2 => "gauss-w2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Quadrature {
    /// Uniform random directions and angles.
    Mc,
    /// Evenly spaced directions and angles (d = 2 only).
    Equispaced2d,
}

#[derive(Debug, Args)]
pub struct DistanceArgs {
    #[arg(long, value_enum)]
    pub metric: DistanceMetric,
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Number of projection directions.
    #[arg(long, default_value_t = 100)]
    pub slices: usize,
    #[arg(long, default_value = "0", value_parser = parse_seed)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Quadrature::Mc)]
    pub quadrature: Quadrature,
    /// Angles per direction for equispaced2d (defaults to --slices).
    #[arg(long)]
    pub phis: Option<usize>,
    /// Quantile nodes for sw-gmm.
    #[arg(long, default_value_t = DEFAULT_QUAD_NODES)]
    pub quad_nodes: usize,
    /// Write the component transport plan (mw, msw) as CSV.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

pub fn distance(args: &DistanceArgs) -> CliResult<()> {
    let a = load_gmm(&args.a)?;
    let b = load_gmm(&args.b)?;
    if a.dim() != b.dim() {
        return Err(CliError::shape(format!("mixtures have dimensions {} and {}", a.dim(), b.dim())));
    }
    let slices = || -> CliResult<SliceSet> {
        Ok(match args.quadrature {
            Quadrature::Mc => SliceSet::monte_carlo(a.dim(), args.slices, args.seed)?,
            Quadrature::Equispaced2d => {
                if a.dim() != 2 {
                    return Err(CliError::input(format!("equispaced2d quadrature needs d = 2, got d = {}", a.dim())));
                }
                SliceSet::equispaced2d(args.slices, args.phis.unwrap_or(args.slices))?
            }
        })
    };

    let mut plan = None;
    let value: DistanceValue = match args.metric {
        DistanceMetric::Mw => {
            if args.plan.is_some() {
                plan = Some(mw_plan(&a, &b)?.plan);
            }
            mw(&a, &b)?
        }
        DistanceMetric::Msw => {
            let s = slices()?;
            if args.plan.is_some() {
                plan = Some(msw_plan(&a, &b, &s)?.plan);
            }
            msw(&a, &b, &s)?
        }
        DistanceMetric::Smw => smw(&a, &b, &slices()?)?,
        DistanceMetric::Dsmw => dsmw(&a, &b, &slices()?)?,
        DistanceMetric::SwGmm => sw_gmm(&a, &b, &slices()?, args.quad_nodes)?,
        DistanceMetric::GaussW2 => {
            if a.len() != 1 || b.len() != 1 {
                return Err(CliError::input(format!("gauss-w2 needs single-component inputs, got K = {} and K = {}", a.len(), b.len())));
            }
            let start = std::time::Instant::now();
            let squared = gaussian_w2(a.component(0), b.component(0))?.max(0.0);
            DistanceValue { value: squared.sqrt(), squared, slices_used: 0, stderr: 0.0, elapsed: start.elapsed() }
        }
    };
    if !value.squared.is_finite() {
        return Err(CliError::Numerical(format!("{} evaluated to {}", args.metric.name(), value.squared)));
    }

    let result = ResultFile {
        metric: args.metric.name().to_string(),
        value: value.value,
        squared: value.squared,
        stderr: value.stderr,
        slices: value.slices_used,
        seed: args.seed,
        elapsed_ms: value.elapsed.as_secs_f64() * 1e3,
        version: VERSION.to_string(),
    };
    let json = to_json(&result)?;
    match (&args.plan, plan) {
        (Some(path), Some(p)) => write_output(Some(path), matrix_csv(&p).as_bytes())?,
        (Some(_), None) => warn(format!("{} has no component transport plan; --plan ignored", args.metric.name())),
        _ => {}
    }
    write_output(args.output.as_deref(), json.as_bytes())
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub points: PathBuf,
    #[arg(long)]
    pub k: usize,
    /// Treat the last CSV column as point weights.
    #[arg(long)]
    pub weights: bool,
    /// Rescale point weights to sum to 1.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value = "0", value_parser = parse_seed)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

pub fn fit(args: &FitArgs) -> CliResult<()> {
    let data = load_points(&args.points, PointsOptions { weights: args.weights, normalize: args.normalize })?;
    let config = EmConfig { max_iters: args.iters, tol: args.tol, cov_reg: None, seed: args.seed };
    let result = em_fit(&data, args.k, &config)?;
    if !result.converged {
        warn(format!("EM stopped after {} iterations without reaching tol {}", result.iterations, args.tol));
    }
    if result.reseeds > 0 {
        warn(format!("{} empty components were re-seeded", result.reseeds));
    }
    write_gmm(args.output.as_deref(), &result.gmm)
}

fn write_gmm(path: Option<&Path>, mu: &Gmm) -> CliResult<()> {
    write_output(path, gmm_to_json(&sort_by_weight(mu)?).as_bytes())
}

fn finish_optim(report: &OptimReport, output: Option<&Path>, trace: Option<&Path>) -> CliResult<()> {
    for w in &report.warnings {
        warn(w);
    }
    if !report.best_loss.is_finite() {
        return Err(CliError::Numerical(format!("held-out objective is {}", report.best_loss)));
    }
    eprintln!("best restart {} held-out DSMW² {:e}", report.best_restart, report.best_loss);
    if let Some(path) = trace {
        write_output(Some(path), trace_csv(&report.traces).as_bytes())?;
    }
    write_gmm(output, &report.best)
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Components of the quantized mixture.
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 100)]
    pub slices: usize,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.03)]
    pub lr: f64,
    #[arg(long, default_value_t = 20)]
    pub restarts: usize,
    /// Covariance floor σ (covariances are QQᵀ + σ²I).
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Held-out directions for picking the best restart (defaults to 10·slices).
    #[arg(long)]
    pub eval_slices: Option<usize>,
    #[arg(long, default_value = "0", value_parser = parse_seed)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Loss trace CSV with columns restart,step,loss.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

pub fn quantize_cmd(args: &QuantizeArgs) -> CliResult<()> {
    let target = load_gmm(&args.input)?;
    let config = OptimConfig {
        slices: args.slices,
        steps: args.steps,
        lr: args.lr,
        restarts: args.restarts,
        sigma_floor: args.sigma,
        seed: args.seed,
        eval_slices: args.eval_slices,
    };
    let report = quantize(&target, args.k, &config)?;
    finish_optim(&report, args.output.as_deref(), args.trace.as_deref())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BarycenterMode {
    /// Weights over all combinations of input components.
    Fixed,
    /// Free K*-component mixture fitted by gradient descent.
    Free,
}

#[derive(Debug, Args)]
pub struct BarycenterArgs {
    #[arg(long, value_enum)]
    pub mode: BarycenterMode,
    #[arg(long, num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    /// Comma-separated barycentric weights (defaults to uniform).
    #[arg(long, value_delimiter = ',')]
    pub lambda: Option<Vec<f64>>,
    #[arg(long, default_value_t = 100)]
    pub slices: usize,
    /// Adam steps (defaults: 10 fixed, 200 free).
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 0.03)]
    pub lr: f64,
    /// Free mode: components of the barycenter.
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    /// Free mode: random initializations.
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    /// Free mode: covariance floor σ.
    #[arg(long, default_value_t = 0.3)]
    pub sigma: f64,
    #[arg(long)]
    pub eval_slices: Option<usize>,
    #[arg(long, default_value = "0", value_parser = parse_seed)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Loss trace CSV (free mode: restart,step,loss; fixed mode: restart 0).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

fn parse_lambda(lambda: Option<&[f64]>, n: usize) -> CliResult<Vec<f64>> {
    let Some(l) = lambda else {
        return Ok(vec![1.0 / n as f64; n]);
    };
    if l.len() != n {
        return Err(CliError::input(format!("{} lambda values for {n} inputs", l.len())));
    }
    if let Some(x) = l.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(CliError::input(format!("lambda values must be finite and nonnegative, got {x}")));
    }
    let sum: f64 = l.iter().sum();
    if (sum - 1.0).abs() > LAMBDA_TOLERANCE {
        return Err(CliError::input(format!("lambda sums to {sum}, expected 1")));
    }
    Ok(l.iter().map(|x| x / sum).collect())
}

pub fn barycenter(args: &BarycenterArgs) -> CliResult<()> {
    let lambda = parse_lambda(args.lambda.as_deref(), args.inputs.len())?;
    let inputs = args.inputs.iter().map(|p| load_gmm(p)).collect::<CliResult<Vec<_>>>()?;
    let d = inputs[0].dim();
    if let Some(mu) = inputs.iter().find(|mu| mu.dim() != d) {
        return Err(CliError::shape(format!("inputs have dimensions {d} and {}", mu.dim())));
    }
    match args.mode {
        BarycenterMode::Fixed => {
            let config = FixedConfig {
                slices: args.slices,
                steps: args.steps.unwrap_or(10),
                lr: args.lr,
                seed: args.seed,
                gaussian: GaussianBarycenterConfig::default(),
            };
            let result = barycenter_fixed(&inputs, &lambda, &config)?;
            if result.unconverged > 0 {
                warn(format!("{} Gaussian barycenters did not converge", result.unconverged));
            }
            if let Some(path) = &args.trace {
                write_output(Some(path), trace_csv(std::slice::from_ref(&result.trace)).as_bytes())?;
            }
            write_gmm(args.output.as_deref(), &result.gmm)
        }
        BarycenterMode::Free => {
            let config = OptimConfig {
                slices: args.slices,
                steps: args.steps.unwrap_or(200),
                lr: args.lr,
                restarts: args.restarts,
                sigma_floor: args.sigma,
                seed: args.seed,
                eval_slices: args.eval_slices,
            };
            let report = barycenter_free(&inputs, &lambda, args.k, &config)?;
            finish_optim(&report, args.output.as_deref(), args.trace.as_deref())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClusterMetricArg {
    Mw,
    Msw,
    Dsmw,
}

#[derive(Debug, Args)]
pub struct ClustersArgs {
    #[arg(long)]
    pub points: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub kmax: usize,
    #[arg(long, value_enum, default_value_t = ClusterMetricArg::Dsmw)]
    pub metric: ClusterMetricArg,
    #[arg(long, default_value_t = 200)]
    pub slices: usize,
    #[arg(long, default_value_t = 0.1)]
    pub tau: f64,
    /// Lower bound on the curve scale used in the threshold (data units).
    #[arg(long, default_value_t = 1.0)]
    pub floor: f64,
    /// Treat the last CSV column as point weights.
    #[arg(long)]
    pub weights: bool,
    #[arg(long)]
    pub normalize: bool,
    #[arg(long, default_value = "0", value_parser = parse_seed)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Curve CSV (k,distance). Defaults to the report path with a
    /// `.curve.csv` extension when -o is given.
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ClusterFile {
    metric: String,
    detected_k: Option<usize>,
    threshold: f64,
    tau: f64,
    scale_floor: f64,
    kmax: usize,
    slices: usize,
    seed: u64,
    /// Entry k-1: distance between the k- and (k+1)-component fits.
    distances: Vec<Option<f64>>,
    fit_seeds: Vec<u64>,
    version: String,
}

pub fn clusters(args: &ClustersArgs) -> CliResult<()> {
    let data = load_points(&args.points, PointsOptions { weights: args.weights, normalize: args.normalize })?;
    let metric = match args.metric {
        ClusterMetricArg::Mw => ClusterMetric::Mw,
        ClusterMetricArg::Msw => ClusterMetric::Msw,
        ClusterMetricArg::Dsmw => ClusterMetric::Dsmw,
    };
    let mut config = ClusterConfig::new(SliceSet::monte_carlo(data.dim(), args.slices, args.seed)?);
    config.tau = args.tau;
    config.scale_floor = args.floor;
    config.em.seed = args.seed;
    let report = detect_clusters(&data, args.kmax, metric, &config)?;
    if report.detected_k.is_none() {
        warn(format!("no drop below the threshold up to k = {}", args.kmax));
    }

    let mut curve = String::from("k,distance\n");
    for (i, d) in report.distances.iter().enumerate() {
        let _ = writeln!(curve, "{},{}", i + 1, d.map(|x| format!("{x:.16e}")).unwrap_or_default());
    }
    let file = ClusterFile {
        metric: metric.name().to_string(),
        detected_k: report.detected_k,
        threshold: report.threshold,
        tau: args.tau,
        scale_floor: args.floor,
        kmax: args.kmax,
        slices: args.slices,
        seed: args.seed,
        distances: report.distances,
        fit_seeds: report.fit_seeds,
        version: VERSION.to_string(),
    };
    let json = to_json(&file)?;
    let curve_path = args.curve.clone().or_else(|| args.output.as_ref().map(|p| p.with_extension("curve.csv")));
    if let Some(path) = curve_path {
        write_output(Some(&path), curve.as_bytes())?;
    }
    write_output(args.output.as_deref(), json.as_bytes())
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated subset of mw,msw,smw,dsmw.
    #[arg(long, value_delimiter = ',', default_value = "mw,msw,dsmw")]
    pub metrics: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "2,16,64,256")]
    pub dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "5,20,50")]
    pub ks: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub slices: usize,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long, default_value = "0", value_parser = parse_seed)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

pub fn bench_cmd(args: &BenchArgs) -> CliResult<()> {
    let metrics = args
        .metrics
        .iter()
        .map(|m| BenchMetric::parse(m).ok_or_else(|| CliError::input(format!("unknown metric {m:?}; expected mw, msw, smw or dsmw"))))
        .collect::<CliResult<Vec<_>>>()?;
    let config = BenchConfig { metrics, dims: args.dims.clone(), ks: args.ks.clone(), slices: args.slices, reps: args.reps, seed: args.seed };
    let report = bench(&config, &SystemClock::new())?;
    let csv = report.to_csv();
    debug_assert!(csv.starts_with(BENCH_CSV_HEADER));
    write_output(args.output.as_deref(), csv.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DensityFormat {
    /// Binary 16-bit PGM, max-normalized, top row at ymax.
    Pgm,
    /// x,y,density rows.
    Csv,
}

#[derive(Debug, Args)]
pub struct DensityArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Resolution as NXxNY.
    #[arg(long, default_value = "256x256", value_parser = parse_grid)]
    pub grid: (usize, usize),
    /// xmin,xmax,ymin,ymax (defaults to component means ± 4 standard deviations).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, num_args = 1)]
    pub bounds: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = DensityFormat::Pgm)]
    pub format: DensityFormat,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let err = || format!("expected NXxNY such as 256x256, got {s:?}");
    let (x, y) = s.split_once(['x', 'X']).ok_or_else(err)?;
    let (nx, ny) = (x.trim().parse().map_err(|_| err())?, y.trim().parse().map_err(|_| err())?);
    if nx == 0 || ny == 0 {
        return Err(err());
    }
    Ok((nx, ny))
}

fn default_bounds(mu: &Gmm) -> [f64; 4] {
    let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    for c in mu.components() {
        for axis in 0..2 {
            let m = c.mean()[axis];
            let s = c.cov().get(axis, axis).max(0.0).sqrt().max(1e-3);
            b[2 * axis] = b[2 * axis].min(m - 4.0 * s);
            b[2 * axis + 1] = b[2 * axis + 1].max(m + 4.0 * s);
        }
    }
    b
}

pub fn density(args: &DensityArgs) -> CliResult<()> {
    let mu = load_gmm(&args.input)?;
    if mu.dim() != 2 {
        return Err(CliError::shape(format!("density grids need d = 2, got d = {}", mu.dim())));
    }
    let bounds = match &args.bounds {
        Some(b) => <[f64; 4]>::try_from(b.as_slice()).map_err(|_| CliError::input(format!("--bounds needs 4 values, got {}", b.len())))?,
        None => default_bounds(&mu),
    };
    let grid = density_grid(&mu, bounds, args.grid)?;
    let (nx, ny) = grid.resolution;
    let bytes = match args.format {
        DensityFormat::Pgm => {
            let max = grid.values.iter().copied().fold(0.0f64, f64::max);
            let mut out = format!("P5\n{nx} {ny}\n65535\n").into_bytes();
            for iy in (0..ny).rev() {
                for ix in 0..nx {
                    let v = if max > 0.0 { (grid.get(ix, iy) / max * 65535.0).round() as u16 } else { 0 };
                    out.extend_from_slice(&v.to_be_bytes());
                }
            }
            out
        }
        DensityFormat::Csv => {
            let [x0, x1, y0, y1] = bounds;
            let (dx, dy) = ((x1 - x0) / nx as f64, (y1 - y0) / ny as f64);
            let mut out = String::from("x,y,density\n");
            for iy in 0..ny {
                for ix in 0..nx {
                    let (x, y) = (x0 + (ix as f64 + 0.5) * dx, y0 + (iy as f64 + 0.5) * dy);
                    let _ = writeln!(out, "{x:.16e},{y:.16e},{:.16e}", grid.get(ix, iy));
                }
            }
            out.into_bytes()
        }
    };
    write_output(args.output.as_deref(), &bytes)
}

#[derive(Debug, Args)]
pub struct CanonicalizeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

/// Validates a mixture file and rewrites it in canonical form (component
/// order preserved).
pub fn canonicalize(args: &CanonicalizeArgs) -> CliResult<()> {
    let mu = load_gmm(&args.input)?;
    write_output(args.output.as_deref(), gmm_to_json(&mu).as_bytes())
}
