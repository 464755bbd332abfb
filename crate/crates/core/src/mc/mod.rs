//! Monte Carlo: path simulation, thinning by planar marks, couplings and
//! estimators for first-arrival and threshold stopping values.

mod estimate;
mod marks;
mod paths;

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::EvalError;

pub use estimate::{discounted_sup_profile, estimate_g, evaluate_policy, Estimate, GEstimate};
pub use marks::{thin_events, SpaceTimeMarks};
pub use paths::{doeblin_couple, simulate_paths, CoupledPaths, PathBundle, StepScheme};

pub const THREADS_ENV: &str = "POISSON_STOP_THREADS";

#[derive(Debug, Error)]
pub enum McError {
    #[error("settings: {0}")]
    Settings(String),
    #[error("path {path} produced a non-finite state at step {step}")]
    NonFinite { path: usize, step: usize },
    #[error("rate {rate} at t = {time} exceeds the intensity cap {cap} (path {path})")]
    IntensityCapExceeded { path: usize, time: f64, rate: f64, cap: f64 },
    #[error("intensity cap could not be settled after {0} enlargements")]
    CapRunaway(usize),
    #[error("problem fails its assumptions: {0}")]
    Assumptions(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Purposes of the per-path random streams.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Purpose {
    Noise = 0,
    Marks = 1,
    PartnerNoise = 2,
    Clock = 3,
    Bridge = 4,
}

/// Independent stream for `(seed, path, purpose)`; path `i` draws the same
/// numbers whatever the number of paths or threads.
pub(crate) fn stream(seed: u64, path: usize, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64 * 8 + purpose as u64);
    rng
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McSettings {
    pub n_paths: usize,
    pub dt: f64,
    /// Simulation horizon; `None` means `40 / beta`.
    pub horizon: Option<f64>,
    pub seed: u64,
    /// Fraction of unfinished paths above which the estimate is flagged.
    pub unfinished_threshold: f64,
    /// Check the rate assumptions before estimating.
    pub validate: bool,
}

impl Default for McSettings {
    fn default() -> Self {
        McSettings {
            n_paths: 100_000,
            dt: 1e-2,
            horizon: None,
            seed: 42,
            unfinished_threshold: 1e-6,
            validate: true,
        }
    }
}

impl McSettings {
    pub fn horizon_for(&self, beta: f64) -> f64 {
        self.horizon.unwrap_or(40.0 / beta)
    }

    pub(crate) fn check(&self) -> Result<(), McError> {
        if self.n_paths < 2 {
            return Err(McError::Settings(format!("need at least 2 paths, got {}", self.n_paths)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(McError::Settings(format!("dt must be positive, got {}", self.dt)));
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(McError::Settings(format!("horizon must be positive, got {h}")));
            }
        }
        Ok(())
    }
}

fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let threads = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or(0);
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool")
    })
}

/// Runs `f` for every path index; results come back in index order.
pub(crate) fn per_path<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    pool().install(|| (0..n).into_par_iter().map(f).collect())
}

/// Fixed-order pairwise summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean and standard error of the mean.
pub fn mean_and_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: f64 = stream(7, 3, Purpose::Noise).gen();
        let b: f64 = stream(7, 3, Purpose::Noise).gen();
        let c: f64 = stream(7, 3, Purpose::Marks).gen();
        let d: f64 = stream(7, 4, Purpose::Noise).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn pairwise_sum_is_order_fixed() {
        let xs: Vec<f64> = (0..1000).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        assert_eq!(pairwise_sum(&xs), pairwise_sum(&xs.clone()));
        assert!((pairwise_sum(&xs) - xs.iter().sum::<f64>()).abs() < 1e-12);
        let (m, se) = mean_and_error(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-15);
    }
}
