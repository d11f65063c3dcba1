//! Experiment harness: configuration, the tick loop, Monte Carlo batches,
//! sweeps and output files.

pub mod config;
pub mod montecarlo;
pub mod output;
pub mod sim;
pub mod sweep;

pub use config::{Mode, ScenarioConfig};
pub use montecarlo::{run_batch, Aggregate, BatchSummary};
pub use sim::{run_scenario, RunMetrics, RunOutput, Scenario, StepRecord};
