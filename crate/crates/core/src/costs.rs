//! Stage, terminal and finite-horizon costs.
//!
//! The stage cost tracks a goal position, penalises inputs and adds a hard
//! penalty `M` whenever the position is inside (or on) the obstacle disc.
//! The terminal cost is the cost the on-board law would accumulate if it took
//! over at the end of the horizon, which is what makes the carried-over buffer
//! a cost-decreasing fallback.

use serde::{Deserialize, Serialize};

use crate::controllers::onboard::OnboardLaw;
use crate::dynamics::{Bicycle, Input, PlantModel, State, PX, PY};
use crate::error::{Error, Result};

/// A circular obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Obstacle {
    /// Signed clearance `‖p − p̃‖ − r`; non-positive means a collision.
    #[inline]
    pub fn clearance(&self, x: &State) -> f64 {
        (x[PX] - self.center[0]).hypot(x[PY] - self.center[1]) - self.radius
    }

    #[inline]
    pub fn contains(&self, x: &State) -> bool {
        self.clearance(x) <= 0.0
    }
}

/// Smooth exponential obstacle barrier `c · exp(−κ (‖p − p̃‖ − r))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Barrier {
    pub weight: f64,
    pub decay: f64,
}

impl Barrier {
    #[inline]
    pub fn eval(&self, clearance: f64) -> f64 {
        self.weight * (-self.decay * clearance).exp()
    }
}

/// Goal, weights and obstacle of the navigation task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub goal: [f64; 2],
    /// Position weight `Q` (2×2, row-major).
    pub q: [[f64; 2]; 2],
    /// Input weight `R` (2×2, row-major).
    pub r: [[f64; 2]; 2],
    #[serde(default)]
    pub obstacle: Option<Obstacle>,
    /// Collision penalty `M`.
    pub penalty: f64,
    /// Barrier used by the edge tier in place of the collision penalty.
    pub edge_barrier: Barrier,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            goal: [100.0, 0.0],
            q: [[0.1, 0.0], [0.0, 0.1]],
            r: [[1.5, 0.0], [0.0, 1.5]],
            obstacle: Some(Obstacle {
                center: [50.0, 3.0],
                radius: 5.0,
            }),
            penalty: 1000.0,
            edge_barrier: Barrier {
                weight: 5000.0,
                decay: 0.1,
            },
        }
    }
}

fn psd(m: &[[f64; 2]; 2]) -> bool {
    m.iter().flatten().all(|v| v.is_finite())
        && m[0][1] == m[1][0]
        && m[0][0] >= 0.0
        && m[1][1] >= 0.0
        && m[0][0] * m[1][1] - m[0][1] * m[1][0] >= 0.0
}

#[inline]
fn quad(m: &[[f64; 2]; 2], a: f64, b: f64) -> f64 {
    a * (m[0][0] * a + m[0][1] * b) + b * (m[1][0] * a + m[1][1] * b)
}

impl TaskSpec {
    pub fn without_obstacle(mut self) -> Self {
        self.obstacle = None;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !psd(&self.q) || !psd(&self.r) {
            return Err(Error::Config("Q and R must be symmetric PSD".into()));
        }
        if !(self.penalty > 0.0) {
            return Err(Error::Config("collision penalty must be positive".into()));
        }
        if !(self.edge_barrier.weight > 0.0 && self.edge_barrier.decay > 0.0) {
            return Err(Error::Config("edge barrier weight and decay must be positive".into()));
        }
        if let Some(ob) = &self.obstacle {
            if !(ob.radius > 0.0) || !ob.center.iter().all(|c| c.is_finite()) {
                return Err(Error::Config("obstacle radius must be positive".into()));
            }
            let g = State::new(self.goal[0], self.goal[1], 0.0, 0.0);
            if ob.contains(&g) {
                return Err(Error::Config("goal lies inside the obstacle".into()));
            }
        }
        if !self.goal.iter().all(|g| g.is_finite()) {
            return Err(Error::Config("goal must be finite".into()));
        }
        Ok(())
    }

    /// `(p − p*)ᵀ Q (p − p*)`.
    #[inline]
    pub fn tracking_cost(&self, x: &State) -> f64 {
        quad(&self.q, x[PX] - self.goal[0], x[PY] - self.goal[1])
    }

    /// `uᵀ R u`.
    #[inline]
    pub fn input_cost(&self, u: &Input) -> f64 {
        quad(&self.r, u[0], u[1])
    }

    #[inline]
    pub fn collides(&self, x: &State) -> bool {
        self.obstacle.is_some_and(|ob| ob.contains(x))
    }
}

/// Stage cost with the hard collision penalty.
///
/// ```
/// use tiered_control::costs::{stage_cost, TaskSpec};
/// use tiered_control::dynamics::{Input, State};
/// let task = TaskSpec { goal: [1.0, 0.0], ..TaskSpec::default() }.without_obstacle();
/// let c = stage_cost(&State::zeros(), &Input::zeros(), &task);
/// assert!((c - 0.1).abs() < 1e-15);
/// ```
#[inline]
pub fn stage_cost(x: &State, u: &Input, task: &TaskSpec) -> f64 {
    let hit = if task.collides(x) { task.penalty } else { 0.0 };
    task.tracking_cost(x) + task.input_cost(u) + hit
}

/// Stage cost with the smooth edge barrier in place of the penalty.
#[inline]
pub fn edge_stage_cost(x: &State, u: &Input, task: &TaskSpec) -> f64 {
    let bar = task
        .obstacle
        .map_or(0.0, |ob| task.edge_barrier.eval(ob.clearance(x)));
    task.tracking_cost(x) + task.input_cost(u) + bar
}

/// How the obstacle enters a stage cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObstacleTerm {
    /// Hard penalty `M · 1{‖p − p̃‖ ≤ r}`.
    Indicator,
    /// Smooth surrogate barrier.
    Barrier(Barrier),
}

/// Length of the on-board tail summed by the terminal cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalHorizon {
    /// Always the same number of on-board steps.
    Fixed(usize),
    /// Steps remaining until an absolute tick; shrinks as time advances.
    UntilTick(u64),
}

impl TerminalHorizon {
    /// Number of tail steps for a terminal state reached at tick `at`.
    pub fn steps(&self, at: u64) -> usize {
        match *self {
            TerminalHorizon::Fixed(h) => h,
            TerminalHorizon::UntilTick(end) => end.saturating_sub(at) as usize,
        }
    }
}

/// Terminal cost: on-board cost-to-go over `steps` closed-loop steps.
pub fn terminal_cost(
    x: &State,
    task: &TaskSpec,
    law: &OnboardLaw,
    model: &Bicycle,
    steps: usize,
) -> f64 {
    let mut costs = Vec::with_capacity(steps);
    let mut z = *x;
    for _ in 0..steps {
        let u = law.input(&z, task);
        costs.push(stage_cost(&z, &u, task));
        z = model.nominal_step(&z, &u);
    }
    rev_sum(0.0, &costs)
}

/// Sums `costs` back to front onto `acc`.
///
/// Summing from the tail makes the cost of a shifted sequence an exact
/// sub-expression of the original sum, so decreases telescope bit-for-bit.
#[inline]
fn rev_sum(acc: f64, costs: &[f64]) -> f64 {
    costs.iter().rev().fold(acc, |acc, c| c + acc)
}

/// Everything needed to evaluate the finite-horizon cost `V_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub model: Bicycle,
    pub task: TaskSpec,
    pub law: OnboardLaw,
    pub horizon: usize,
    pub terminal: TerminalHorizon,
    pub obstacle_term: ObstacleTerm,
}

impl CostModel {
    pub fn new(
        model: Bicycle,
        task: TaskSpec,
        law: OnboardLaw,
        horizon: usize,
        terminal: TerminalHorizon,
    ) -> Self {
        Self {
            model,
            task,
            law,
            horizon,
            terminal,
            obstacle_term: ObstacleTerm::Indicator,
        }
    }

    /// The same cost with a smooth barrier instead of the hard penalty.
    pub fn with_barrier(mut self, barrier: Barrier) -> Self {
        self.obstacle_term = ObstacleTerm::Barrier(barrier);
        self
    }

    #[inline]
    pub fn stage(&self, x: &State, u: &Input) -> f64 {
        match self.obstacle_term {
            ObstacleTerm::Indicator => stage_cost(x, u, &self.task),
            ObstacleTerm::Barrier(b) => {
                let bar = self.task.obstacle.map_or(0.0, |ob| b.eval(ob.clearance(x)));
                self.task.tracking_cost(x) + self.task.input_cost(u) + bar
            }
        }
    }

    /// Terminal cost for a terminal state reached at tick `at`.
    pub fn terminal_at(&self, z: &State, at: u64) -> f64 {
        let steps = self.terminal.steps(at);
        let mut costs = Vec::with_capacity(steps);
        let mut z = *z;
        for _ in 0..steps {
            let u = self.law.input(&z, &self.task);
            costs.push(self.stage(&z, &u));
            z = self.model.nominal_step(&z, &u);
        }
        rev_sum(0.0, &costs)
    }

    /// `V_N(x, U)` for a sequence starting at tick `tick`.
    pub fn finite_horizon_cost(&self, x: &State, seq: &[Input], tick: u64) -> Result<f64> {
        if seq.len() != self.horizon {
            return Err(Error::SequenceLength {
                expected: self.horizon,
                got: seq.len(),
            });
        }
        Ok(self.cost_unchecked(x, seq, tick))
    }

    pub(crate) fn cost_unchecked(&self, x: &State, seq: &[Input], tick: u64) -> f64 {
        let mut stages = Vec::with_capacity(seq.len());
        let mut z = *x;
        for u in seq {
            stages.push(self.stage(&z, u));
            z = self.model.nominal_step(&z, u);
        }
        let term = self.terminal_at(&z, tick + seq.len() as u64);
        rev_sum(term, &stages)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn task_at_origin() -> TaskSpec {
        TaskSpec {
            goal: [0.0, 0.0],
            obstacle: Some(Obstacle {
                center: [1.0, 0.0],
                radius: 0.5,
            }),
            ..TaskSpec::default()
        }
    }

    #[test]
    fn at_goal_with_zero_input_costs_nothing() {
        assert_eq!(stage_cost(&State::zeros(), &Input::zeros(), &task_at_origin()), 0.0);
    }

    #[test]
    fn collision_adds_penalty_on_closed_disc() {
        let t = task_at_origin();
        let inside = State::new(1.0, 0.0, 0.0, 0.0);
        assert_relative_eq!(stage_cost(&inside, &Input::zeros(), &t), 0.1 + 1000.0, epsilon = 1e-12);
        let boundary = State::new(1.5, 0.0, 0.0, 0.0);
        assert!(stage_cost(&boundary, &Input::zeros(), &t) > 1000.0);
        let outside = State::new(1.5 + 1e-9, 0.0, 0.0, 0.0);
        assert!(stage_cost(&outside, &Input::zeros(), &t) < 1.0);
    }

    #[test]
    fn input_weight() {
        let t = task_at_origin().without_obstacle();
        assert_relative_eq!(stage_cost(&State::zeros(), &Input::new(1.0, 1.0), &t), 3.0, epsilon = 1e-15);
    }

    #[test]
    fn edge_barrier_on_boundary_equals_weight() {
        let t = task_at_origin();
        let boundary = State::new(1.5, 0.0, 0.0, 0.0);
        let expected = t.tracking_cost(&boundary) + 5000.0;
        assert_relative_eq!(edge_stage_cost(&boundary, &Input::zeros(), &t), expected, epsilon = 1e-9);
    }

    #[test]
    fn terminal_zero_steps() {
        let t = TaskSpec::default();
        let x = State::new(3.0, 1.0, 0.2, 0.4);
        assert_eq!(terminal_cost(&x, &t, &OnboardLaw::default(), &Bicycle::default(), 0), 0.0);
    }

    #[test]
    fn terminal_one_step_is_a_stage() {
        let t = TaskSpec::default();
        let law = OnboardLaw::default();
        let x = State::new(3.0, 1.0, 0.2, 0.4);
        let c = terminal_cost(&x, &t, &law, &Bicycle::default(), 1);
        assert_eq!(c, stage_cost(&x, &law.input(&x, &t), &t));
    }

    #[test]
    fn sequence_length_checked() {
        let cm = CostModel::new(
            Bicycle::default(),
            TaskSpec::default(),
            OnboardLaw::default(),
            25,
            TerminalHorizon::Fixed(10),
        );
        assert!(matches!(
            cm.finite_horizon_cost(&State::zeros(), &vec![Input::zeros(); 24], 0),
            Err(Error::SequenceLength { expected: 25, got: 24 })
        ));
    }

    #[test]
    fn horizon_one_matches_stage_plus_terminal() {
        let t = TaskSpec::default();
        let law = OnboardLaw::default();
        let m = Bicycle::default();
        let cm = CostModel::new(m, t, law, 1, TerminalHorizon::Fixed(7));
        let x = State::new(3.0, 1.0, 0.2, 0.4);
        let u = Input::new(0.1, -0.2);
        let v = cm.finite_horizon_cost(&x, &[u], 0).unwrap();
        let expect = stage_cost(&x, &u, &t) + terminal_cost(&m.nominal_step(&x, &u), &t, &law, &m, 7);
        assert_relative_eq!(v, expect, max_relative = 1e-14);
    }

    #[test]
    fn shrinking_tail_telescopes_exactly() {
        // V(x, U) = C(x, u0) + V(f(x, u0), shifted U padded with the on-board input)
        let t = TaskSpec::default();
        let law = OnboardLaw::default();
        let m = Bicycle::default();
        let cm = CostModel::new(m, t, law, 5, TerminalHorizon::UntilTick(60));
        let x = State::new(10.0, 2.0, 0.1, 0.7);
        let seq: Vec<Input> = (0..5).map(|i| Input::new(0.01 * i as f64, 0.05)).collect();
        let v0 = cm.finite_horizon_cost(&x, &seq, 3).unwrap();
        let end = crate::dynamics::predict(&m, &x, &seq, 5).unwrap();
        let mut shifted = seq[1..].to_vec();
        shifted.push(law.input(&end, &t));
        let x1 = m.nominal_step(&x, &seq[0]);
        let v1 = cm.finite_horizon_cost(&x1, &shifted, 4).unwrap();
        // Only the final subtraction rounds.
        assert!((v1 - v0 + stage_cost(&x, &seq[0], &t)).abs() <= 4.0 * f64::EPSILON * v0);
    }

    #[test]
    fn validation() {
        assert!(TaskSpec::default().validate().is_ok());
        let mut bad = TaskSpec::default();
        bad.q = [[1.0, 2.0], [2.0, 1.0]];
        assert!(bad.validate().is_err());
        let mut bad = TaskSpec::default();
        bad.penalty = 0.0;
        assert!(bad.validate().is_err());
    }
}
