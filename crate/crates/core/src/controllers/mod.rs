//! The three controller tiers.
//!
//! * [`cloud`]: nonlinear MPC by projected gradient descent (single shooting).
//! * [`edge`]: linear-quadratic MPC obtained from one linearisation per call.
//! * [`onboard`]: the waypoint law, cheap enough to run on the vehicle.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::costs::CostModel;
use crate::dynamics::{Input, PlantModel, State};

pub mod cloud;
pub mod edge;
pub mod onboard;

/// Where a control sequence was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Cloud,
    Edge,
    Onboard,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Cloud => "cloud",
            Tier::Edge => "edge",
            Tier::Onboard => "onboard",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Iteration budget for the iterative solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBudget {
    pub max_iterations: usize,
    pub step_tolerance: f64,
}

impl SolverBudget {
    pub const CLOUD_DEFAULT: SolverBudget = SolverBudget {
        max_iterations: 30,
        step_tolerance: 1e-8,
    };
    pub const EDGE_DEFAULT: SolverBudget = SolverBudget {
        max_iterations: 50,
        step_tolerance: 1e-8,
    };
}

/// A receding-horizon controller producing length-`N` input sequences.
pub trait Controller {
    fn tier(&self) -> Tier;

    /// Sequence to apply from state `x`, whose first input is applied at
    /// `tick`.  `warm_start`, when given, has length `N`.
    fn solve(&mut self, x: &State, tick: u64, warm_start: Option<&[Input]>) -> Vec<Input>;
}

/// Bookkeeping from the last solver call.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Infinity norm of the last accepted step (cloud) or KKT residual (edge).
    pub residual: f64,
    /// The solver result lost to its reference sequence and was replaced.
    pub fell_back: bool,
}

/// Completes a partial sequence to length `N` by running the on-board law
/// from the state the partial sequence reaches.
pub fn extend_with_onboard(cost: &CostModel, x: &State, partial: &[Input]) -> Vec<Input> {
    let n = cost.horizon;
    let mut seq: Vec<Input> = partial.iter().take(n).copied().collect();
    let mut z = seq.iter().fold(*x, |z, u| cost.model.nominal_step(&z, u));
    while seq.len() < n {
        let u = cost.law.input(&z, &cost.task);
        z = cost.model.nominal_step(&z, &u);
        seq.push(u);
    }
    seq
}
