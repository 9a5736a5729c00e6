use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::distances::{dsmw, msw, mw, smw, SliceSet};
use crate::error::{invalid, Error, Result};
use crate::linalg::{PsdMatrix, SymMatrix};
use crate::mixture::{GaussianComponent, Gmm};
use crate::rng::{derive_seed, rng_from};

pub const BENCH_CSV_HEADER: &str = "metric,d,K,L,reps,mean_ms,std_ms";

/// Time source for the benchmark.
pub trait Clock: Sync {
    /// Monotonic time since an arbitrary origin.
    fn now(&self) -> Duration;
}

#[derive(Debug, Clone, Copy)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMetric {
    Mw,
    Msw,
    Smw,
    Dsmw,
}

impl BenchMetric {
    pub fn name(self) -> &'static str {
        match self {
            BenchMetric::Mw => "mw",
            BenchMetric::Msw => "msw",
            BenchMetric::Smw => "smw",
            BenchMetric::Dsmw => "dsmw",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mw" => Some(BenchMetric::Mw),
            "msw" => Some(BenchMetric::Msw),
            "smw" => Some(BenchMetric::Smw),
            "dsmw" => Some(BenchMetric::Dsmw),
            _ => None,
        }
    }

    fn run(self, a: &Gmm, b: &Gmm, slices: &SliceSet) -> Result<f64> {
        Ok(match self {
            BenchMetric::Mw => mw(a, b)?.value,
            BenchMetric::Msw => msw(a, b, slices)?.value,
            BenchMetric::Smw => smw(a, b, slices)?.value,
            BenchMetric::Dsmw => dsmw(a, b, slices)?.value,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub metrics: Vec<BenchMetric>,
    pub dims: Vec<usize>,
    pub ks: Vec<usize>,
    pub slices: usize,
    pub reps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub metric: BenchMetric,
    pub d: usize,
    pub k: usize,
    pub l: usize,
    pub reps: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Worker threads inside each timed call.
    pub threads: usize,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(BENCH_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{},{:.6},{:.6}", r.metric.name(), r.d, r.k, r.l, r.reps, r.mean_ms, r.std_ms);
        }
        out
    }

    pub fn row(&self, metric: BenchMetric, d: usize, k: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.metric == metric && r.d == d && r.k == k)
    }
}

/// A seeded random `k`-component mixture in `R^d` with well-conditioned
/// full covariances.
pub(crate) fn random_gmm(d: usize, k: usize, seed: u64) -> Result<Gmm> {
    let mut rng = rng_from(seed, &[0xBE4C]);
    let mut weights = Vec::with_capacity(k);
    let mut comps = Vec::with_capacity(k);
    for _ in 0..k {
        weights.push(rng.random_range(0.5..1.5));
        let mean: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0).collect();
        let a: Vec<f64> = (0..d * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let v: f64 = (0..d).map(|t| a[i * d + t] * a[j * d + t]).sum::<f64>() / d as f64;
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
            cov[i * d + i] += 0.1;
        }
        comps.push(GaussianComponent::new(mean, PsdMatrix::new(SymMatrix::new(d, cov)?)?)?);
    }
    let total: f64 = weights.iter().sum();
    Gmm::new(weights.iter().map(|w| w / total).collect(), comps)
}

/// Times each metric on seeded random mixture pairs for every `(d, K)`.
///
/// Only the metric call itself is timed: mixture generation, slice
/// sampling and thread-pool setup happen before the first clock read.
/// Every timed call runs on a single worker thread.
pub fn bench(config: &BenchConfig, clock: &dyn Clock) -> Result<BenchReport> {
    if config.metrics.is_empty() || config.dims.is_empty() || config.ks.is_empty() {
        return Err(invalid("need at least one metric, dimension and component count"));
    }
    if config.reps == 0 || config.slices == 0 || config.dims.contains(&0) || config.ks.contains(&0) {
        return Err(invalid("sizes and repetitions must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Numerical(format!("cannot build the benchmark thread pool: {e}")))?;
    let mut rows = Vec::new();
    for &d in &config.dims {
        for &k in &config.ks {
            let a = random_gmm(d, k, derive_seed(config.seed, &[d as u64, k as u64, 0]))?;
            let b = random_gmm(d, k, derive_seed(config.seed, &[d as u64, k as u64, 1]))?;
            for &metric in &config.metrics {
                let mut times = Vec::with_capacity(config.reps);
                for rep in 0..config.reps {
                    let slices = SliceSet::monte_carlo(d, config.slices, derive_seed(config.seed, &[d as u64, k as u64, 2, rep as u64]))?;
                    let t0 = clock.now();
                    pool.install(|| metric.run(&a, &b, &slices))?;
                    let t1 = clock.now();
                    times.push((t1.saturating_sub(t0)).as_secs_f64() * 1e3);
                }
                let n = times.len() as f64;
                let mean = times.iter().sum::<f64>() / n;
                let std = if times.len() > 1 { (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
                rows.push(BenchRow { metric, d, k, l: config.slices, reps: config.reps, mean_ms: mean, std_ms: std });
            }
        }
    }
    Ok(BenchReport { rows, threads: 1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    /// Advances one millisecond per read and counts reads.
    struct StepClock(Mutex<u64>);

    impl Clock for StepClock {
        fn now(&self) -> Duration {
            let mut t = self.0.lock().unwrap();
            *t += 1;
            Duration::from_millis(*t)
        }
    }

    fn config() -> BenchConfig {
        BenchConfig { metrics: vec![BenchMetric::Mw, BenchMetric::Msw, BenchMetric::Dsmw], dims: vec![2, 3], ks: vec![2], slices: 10, reps: 3, seed: 1 }
    }

    #[test]
    fn only_metric_calls_are_timed() {
        let clock = StepClock(Mutex::new(0));
        let r = bench(&config(), &clock).unwrap();
        // two reads per repetition and nothing else
        assert_eq!(*clock.0.lock().unwrap(), 2 * 3 * 3 * 2);
        assert!(r.rows.iter().all(|row| row.mean_ms == 1.0 && row.std_ms == 0.0));
        assert_eq!(r.threads, 1);
    }

    #[test]
    fn csv_layout() {
        let r = bench(&config(), &SystemClock::new()).unwrap();
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(BENCH_CSV_HEADER));
        assert_eq!(lines.count(), 6);
        assert!(r.rows.iter().all(|row| row.mean_ms > 0.0));
        assert!(r.row(BenchMetric::Msw, 3, 2).is_some());
    }

    #[test]
    fn random_mixtures_are_seeded() {
        assert_eq!(random_gmm(4, 3, 9).unwrap(), random_gmm(4, 3, 9).unwrap());
        assert_ne!(random_gmm(4, 3, 9).unwrap(), random_gmm(4, 3, 10).unwrap());
    }
}
