//! Experiment harnesses: cluster-count detection from consecutive fits,
//! the covariance-collapse divergence curve, Monte Carlo error rates and
//! metric timing.

mod bench;
mod clusters;
mod divergence;
mod rate;

pub use bench::{bench, BenchConfig, BenchMetric, BenchReport, BenchRow, Clock, SystemClock, BENCH_CSV_HEADER};
pub use clusters::{detect_clusters, ClusterConfig, ClusterMetric, ClusterReport};
pub use divergence::{covariance_collapse_curve, DivergencePoint};
pub use rate::{verify_mc_rate, RateProblem, RateReport, RateRow};
