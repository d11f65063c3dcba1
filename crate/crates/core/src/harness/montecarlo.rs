//! Independent runs in parallel, aggregated in seed order.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::sim::{RunMetrics, Scenario};
use crate::error::Result;

/// Seed of run `i` in a batch started from `base`.
///
/// Seeds come from a ChaCha stream so neighbouring base seeds do not give
/// overlapping batches.
pub fn run_seeds(base: u64, runs: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    (0..runs).map(|_| rng.next_u64()).collect()
}

/// Sample mean, standard deviation and a normal 95 % interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub ci95: [f64; 2],
    pub min: f64,
    pub max: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                n,
                mean: f64::NAN,
                std_dev: f64::NAN,
                ci95: [f64::NAN; 2],
                min: f64::NAN,
                max: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let std_dev = var.sqrt();
        let half = 1.959_963_984_540_054 * std_dev / (n as f64).sqrt();
        Self {
            n,
            mean,
            std_dev,
            ci95: [mean - half, mean + half],
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Aggregated metrics of a batch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchSummary {
    pub config_hash: String,
    pub base_seed: u64,
    pub seeds: Vec<u64>,
    pub average_cost: Aggregate,
    pub cloud_fraction: Aggregate,
    pub edge_fraction: Aggregate,
    pub buffer_fraction: Aggregate,
    pub onboard_fraction: Aggregate,
    pub cloud_origin: Aggregate,
    pub final_distance: Aggregate,
    /// Runs with at least one decrease violation on an obstacle-free tick.
    pub runs_with_violations: usize,
    pub collision_ticks: u64,
    pub runs: Vec<RunMetrics>,
}

impl BatchSummary {
    pub fn from_runs(config_hash: String, base_seed: u64, seeds: Vec<u64>, runs: Vec<RunMetrics>) -> Self {
        let col = |f: &dyn Fn(&RunMetrics) -> f64| Aggregate::of(&runs.iter().map(f).collect::<Vec<_>>());
        Self {
            config_hash,
            base_seed,
            seeds,
            average_cost: col(&|m| m.average_cost),
            cloud_fraction: col(&|m| m.sources.cloud),
            edge_fraction: col(&|m| m.sources.edge),
            buffer_fraction: col(&|m| m.sources.buffer),
            onboard_fraction: col(&|m| m.sources.onboard),
            cloud_origin: col(&|m| m.cloud_origin),
            final_distance: col(&|m| m.final_distance),
            runs_with_violations: runs.iter().filter(|m| m.lyapunov.violation_count() > 0).count(),
            collision_ticks: runs.iter().map(|m| m.collision_ticks).sum(),
            runs,
        }
    }

    /// Relative degradation of the mean cost against `baseline`.
    pub fn degradation(&self, baseline: &BatchSummary) -> f64 {
        self.average_cost.mean / baseline.average_cost.mean - 1.0
    }
}

/// Runs `runs` independent simulations of `scenario` from `base_seed`.
///
/// The result does not depend on the number of worker threads.
pub fn run_batch(scenario: &Scenario, base_seed: u64, runs: usize) -> Result<BatchSummary> {
    let seeds = run_seeds(base_seed, runs);
    let metrics = seeds
        .par_iter()
        .map(|&s| scenario.run(s).map(|o| o.metrics))
        .collect::<Result<Vec<_>>>()?;
    Ok(BatchSummary::from_runs(
        scenario.config_hash().to_owned(),
        base_seed,
        seeds,
        metrics,
    ))
}
