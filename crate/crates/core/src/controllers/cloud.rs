//! Nonlinear MPC for the cloud tier.
//!
//! Single shooting over the `N` inputs with a projected Barzilai–Borwein
//! gradient method.  The hard collision penalty is not differentiable, so the
//! optimiser works on a surrogate cost in which it is replaced by a steep
//! exponential barrier; the result is then re-scored with the true cost and
//! only kept if it is no worse than the reference sequence.
//!
//! Gradients come from an adjoint sweep that also runs through the terminal
//! on-board rollout, including the motion of its waypoint.

use nalgebra::{Vector2, Vector4};
use serde::{Deserialize, Serialize};

use super::{extend_with_onboard, Controller, SolveReport, SolverBudget, Tier};
use crate::costs::{Barrier, CostModel, ObstacleTerm};
use crate::dynamics::{Input, PlantModel, State, PX, PY, SLIP};

/// Tunables of the cloud solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudSettings {
    pub budget: SolverBudget,
    /// Smooth stand-in for the collision penalty used while optimising.
    pub surrogate: Barrier,
    /// Bound on the slip angle, `|β| ≤ max_slip`.
    pub max_slip: f64,
}

impl Default for CloudSettings {
    fn default() -> Self {
        Self {
            budget: SolverBudget::CLOUD_DEFAULT,
            surrogate: Barrier {
                weight: 1000.0,
                decay: 25.0,
            },
            max_slip: 1.2,
        }
    }
}

/// Cloud-tier nonlinear MPC.
#[derive(Debug, Clone)]
pub struct CloudController {
    cost: CostModel,
    surrogate: CostModel,
    settings: CloudSettings,
    last: SolveReport,
}

impl CloudController {
    /// `cost` is the true selection cost (with the hard penalty).
    pub fn new(cost: CostModel, settings: CloudSettings) -> Self {
        let surrogate = cost.clone().with_barrier(settings.surrogate);
        Self {
            cost,
            surrogate,
            settings,
            last: SolveReport::default(),
        }
    }

    pub fn cost_model(&self) -> &CostModel {
        &self.cost
    }

    pub fn last_report(&self) -> SolveReport {
        self.last
    }

    fn project(&self, seq: &mut [Input]) {
        let m = self.settings.max_slip;
        for u in seq {
            u[SLIP] = u[SLIP].clamp(-m, m);
        }
    }

    /// Surrogate cost and its gradient with respect to every input.
    pub fn surrogate_gradient(&self, x: &State, seq: &[Input], tick: u64, grad: &mut [Input]) -> f64 {
        value_and_gradient(&self.surrogate, x, seq, tick, grad)
    }

    /// Runs the optimiser and enforces the no-worse-than-reference contract.
    pub fn optimize(&mut self, x: &State, tick: u64, warm_start: Option<&[Input]>) -> Vec<Input> {
        let reference = match warm_start {
            Some(w) if w.len() == self.cost.horizon => w.to_vec(),
            _ => extend_with_onboard(&self.cost, x, &[]),
        };
        let (u, iterations, residual) = self.descend(x, tick, &reference);
        let v_new = self.cost.cost_unchecked(x, &u, tick);
        let v_ref = self.cost.cost_unchecked(x, &reference, tick);
        let fell_back = !(v_new <= v_ref);
        self.last = SolveReport {
            iterations,
            residual,
            fell_back,
        };
        if fell_back {
            reference
        } else {
            u
        }
    }

    /// Projected Barzilai–Borwein descent on the surrogate from `start`.
    /// Returns the iterate, the iteration count and the last step length.
    fn descend(&self, x: &State, tick: u64, start: &[Input]) -> (Vec<Input>, usize, f64) {
        let n = start.len();
        let mut u = start.to_vec();
        self.project(&mut u);

        let SolverBudget {
            max_iterations,
            step_tolerance,
        } = self.settings.budget;
        let mut grad = vec![Input::zeros(); n];
        let mut f = value_and_gradient(&self.surrogate, x, &u, tick, &mut grad);
        let mut alpha = 0.05;
        let mut iterations = 0;
        let mut last_step = f64::INFINITY;
        let mut trial = vec![Input::zeros(); n];
        let mut trial_grad = vec![Input::zeros(); n];

        while iterations < max_iterations && f.is_finite() {
            iterations += 1;
            // Backtracking along the projected-gradient arc.
            let accepted = loop {
                for i in 0..n {
                    trial[i] = u[i] - alpha * grad[i];
                }
                self.project(&mut trial);
                let moved: f64 = trial.iter().zip(&u).map(|(a, b)| (a - b).norm_squared()).sum();
                if moved == 0.0 {
                    break None;
                }
                let ft = self.surrogate.cost_unchecked(x, &trial, tick);
                if ft.is_finite() && ft <= f - 1e-4 / alpha * moved {
                    break Some(ft);
                }
                alpha *= 0.5;
                if alpha < 1e-14 {
                    break None;
                }
            };
            if accepted.is_none() {
                last_step = 0.0;
                break;
            }
            let ft = value_and_gradient(&self.surrogate, x, &trial, tick, &mut trial_grad);
            let (mut ss, mut sy) = (0.0, 0.0);
            last_step = 0.0;
            for i in 0..n {
                let s = trial[i] - u[i];
                let y = trial_grad[i] - grad[i];
                ss += s.norm_squared();
                sy += s.dot(&y);
                last_step = last_step.max(s.amax());
            }
            std::mem::swap(&mut u, &mut trial);
            std::mem::swap(&mut grad, &mut trial_grad);
            f = ft;
            alpha = if sy > 0.0 { (ss / sy).clamp(1e-8, 1e3) } else { (alpha * 2.0).min(1e3) };
            if last_step <= step_tolerance {
                break;
            }
        }
        (u, iterations, last_step)
    }
}

impl Controller for CloudController {
    fn tier(&self) -> Tier {
        Tier::Cloud
    }

    fn solve(&mut self, x: &State, tick: u64, warm_start: Option<&[Input]>) -> Vec<Input> {
        self.optimize(x, tick, warm_start)
    }
}

/// Gradient of one stage cost with respect to state and input.
fn stage_gradient(cm: &CostModel, x: &State, u: &Input) -> (Vector4<f64>, Vector2<f64>) {
    let t = &cm.task;
    let (ex, ey) = (x[PX] - t.goal[0], x[PY] - t.goal[1]);
    let mut gx = Vector4::new(
        (t.q[0][0] + t.q[0][0]) * ex + (t.q[0][1] + t.q[1][0]) * ey,
        (t.q[1][0] + t.q[0][1]) * ex + (t.q[1][1] + t.q[1][1]) * ey,
        0.0,
        0.0,
    );
    if let (ObstacleTerm::Barrier(b), Some(ob)) = (cm.obstacle_term, t.obstacle) {
        let (ox, oy) = (x[PX] - ob.center[0], x[PY] - ob.center[1]);
        let d = ox.hypot(oy);
        if d > 0.0 {
            let k = -b.decay * b.eval(d - ob.radius) / d;
            gx[PX] += k * ox;
            gx[PY] += k * oy;
        }
    }
    let gu = Vector2::new(
        (t.r[0][0] + t.r[0][0]) * u[0] + (t.r[0][1] + t.r[1][0]) * u[1],
        (t.r[1][0] + t.r[0][1]) * u[0] + (t.r[1][1] + t.r[1][1]) * u[1],
    );
    (gx, gu)
}

fn value_and_gradient(cm: &CostModel, x: &State, seq: &[Input], tick: u64, grad: &mut [Input]) -> f64 {
    let n = seq.len();
    let mut xs = Vec::with_capacity(n + 1);
    xs.push(*x);
    // Stage costs are summed back to front, matching `CostModel`.
    let mut costs = Vec::with_capacity(n + 64);
    for (i, u) in seq.iter().enumerate() {
        costs.push(cm.stage(&xs[i], u));
        xs.push(cm.model.nominal_step(&xs[i], u));
    }

    // Terminal rollout under the on-board law.
    let steps = cm.terminal.steps(tick + n as u64);
    let mut zs = Vec::with_capacity(steps);
    let mut z = xs[n];
    for _ in 0..steps {
        let q = cm.law.waypoint([z[PX], z[PY]], &cm.task);
        let u = cm.law.input_towards(&z, q);
        costs.push(cm.stage(&z, &u));
        zs.push((z, u));
        z = cm.model.nominal_step(&z, &u);
    }

    let value = costs.iter().rev().fold(0.0, |acc, c| c + acc);

    let mut lambda = Vector4::zeros();
    for (z, u) in zs.iter().rev() {
        let (gx, gu) = stage_gradient(cm, z, u);
        let jp = cm.law.closed_loop_jacobian(z, &cm.task);
        let (a, b) = cm.model.jacobians(z, u);
        let closed = a + b * jp;
        lambda = gx + jp.transpose() * gu + closed.transpose() * lambda;
    }
    for i in (0..n).rev() {
        let (gx, gu) = stage_gradient(cm, &xs[i], &seq[i]);
        let (a, b) = cm.model.jacobians(&xs[i], &seq[i]);
        grad[i] = gu + b.transpose() * lambda;
        lambda = gx + a.transpose() * lambda;
    }
    value
}
