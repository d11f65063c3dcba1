//! Linear-quadratic MPC for the edge tier.
//!
//! The bicycle is linearised once per call about the current state with zero
//! input, the obstacle barrier is expanded to first order about the warm-start
//! trajectory, and the tail after the horizon is modelled as coasting under
//! the same linear model.  The resulting unconstrained QP in the `2N` inputs
//! is dense and small, so it is solved by Cholesky with iterative refinement
//! until the stationarity (KKT) residual drops below the step tolerance.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::{extend_with_onboard, Controller, SolveReport, SolverBudget, Tier};
use crate::costs::CostModel;
use crate::dynamics::{rollout, Input, PlantModel, State, PX, PY};

/// Tunables of the edge solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSettings {
    pub budget: SolverBudget,
    /// Diagonal shift added to the Hessian.
    pub regularization: f64,
}

impl Default for EdgeSettings {
    fn default() -> Self {
        Self {
            budget: SolverBudget::EDGE_DEFAULT,
            regularization: 1e-9,
        }
    }
}

/// `½ Uᵀ H U + gᵀ U` over the stacked inputs `U = [u_0; …; u_{N−1}]`.
#[derive(Debug, Clone)]
pub struct EdgeQp {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
}

impl EdgeQp {
    /// Infinity norm of the stationarity residual `H U + g`.
    pub fn kkt_residual(&self, u: &DVector<f64>) -> f64 {
        (&self.hessian * u + &self.gradient).amax()
    }
}

/// Edge-tier linear MPC.
#[derive(Debug, Clone)]
pub struct EdgeController {
    cost: CostModel,
    settings: EdgeSettings,
    last: SolveReport,
}

impl EdgeController {
    pub fn new(cost: CostModel, settings: EdgeSettings) -> Self {
        Self {
            cost,
            settings,
            last: SolveReport::default(),
        }
    }

    pub fn last_report(&self) -> SolveReport {
        self.last
    }

    /// Builds the QP for state `x`, with the barrier linearised about the
    /// trajectory of `warm`.
    pub fn build_qp(&self, x: &State, tick: u64, warm: &[Input]) -> EdgeQp {
        let cm = &self.cost;
        let n = cm.horizon;
        let dim = 2 * n;
        let task = &cm.task;
        let (a, b) = cm.model.jacobians(x, &Input::zeros());
        let c0 = cm.model.nominal_step(x, &Input::zeros()) - a * x;

        // Position weight lifted to the state, and its linear term.
        let mut w = Matrix4::zeros();
        for r in 0..2 {
            for c in 0..2 {
                w[(r, c)] = task.q[r][c];
            }
        }
        let goal = Vector4::new(task.goal[0], task.goal[1], 0.0, 0.0);
        let w_goal = w * goal;

        let mut hess = DMatrix::<f64>::zeros(dim, dim);
        let mut grad = DVector::<f64>::zeros(dim);
        let mut g_i = DMatrix::<f64>::zeros(4, dim);
        let mut s_i = *x;

        let warm_traj = rollout(&cm.model, x, warm);
        let w_dyn = DMatrix::from_column_slice(4, 4, w.as_slice());

        for i in 0..n {
            // Tracking term on x_i (constant at i = 0, where G_0 = 0).
            if i > 0 {
                let wg = &w_dyn * &g_i;
                hess += 2.0 * g_i.transpose() * &wg;
                let lin = w * s_i - w_goal;
                grad += 2.0 * g_i.transpose() * DVector::from_column_slice(lin.as_slice());

                if let Some(ob) = task.obstacle {
                    let p = warm_traj[i];
                    let (ox, oy) = (p[PX] - ob.center[0], p[PY] - ob.center[1]);
                    let d = ox.hypot(oy);
                    if d > 0.0 {
                        let k = -task.edge_barrier.decay * task.edge_barrier.eval(d - ob.radius) / d;
                        let gb = DVector::from_vec(vec![k * ox, k * oy, 0.0, 0.0]);
                        grad += g_i.transpose() * gb;
                    }
                }
            }
            // Input term.
            for r in 0..2 {
                for c in 0..2 {
                    hess[(2 * i + r, 2 * i + c)] += 2.0 * task.r[r][c];
                }
            }
            // Propagate x_{i+1} = A x_i + B u_i + c0.
            let a_dyn = DMatrix::from_column_slice(4, 4, a.as_slice());
            let mut next = &a_dyn * &g_i;
            for r in 0..4 {
                for c in 0..2 {
                    next[(r, 2 * i + c)] += b[(r, c)];
                }
            }
            g_i = next;
            s_i = a * s_i + c0;
        }

        // Coasting tail: value xᵀ S x + 2 sᵀ x, built backwards.
        let steps = cm.terminal.steps(tick + n as u64);
        let mut s_mat = Matrix4::zeros();
        let mut s_vec = Vector4::zeros();
        for _ in 0..steps {
            let next_vec = -w_goal + a.transpose() * (s_mat * c0 + s_vec);
            s_mat = w + a.transpose() * s_mat * a;
            s_vec = next_vec;
        }
        let s_dyn = DMatrix::from_column_slice(4, 4, s_mat.as_slice());
        hess += 2.0 * g_i.transpose() * (&s_dyn * &g_i);
        let lin = s_mat * s_i + s_vec;
        grad += 2.0 * g_i.transpose() * DVector::from_column_slice(lin.as_slice());

        // Symmetrise against round-off, then regularise.
        let hess = (&hess + hess.transpose()) * 0.5
            + DMatrix::<f64>::identity(dim, dim) * self.settings.regularization;
        EdgeQp {
            hessian: hess,
            gradient: grad,
        }
    }

    pub fn optimize(&mut self, x: &State, tick: u64, warm_start: Option<&[Input]>) -> Vec<Input> {
        let n = self.cost.horizon;
        let warm = match warm_start {
            Some(w) if w.len() == n => w.to_vec(),
            _ => extend_with_onboard(&self.cost, x, &[]),
        };
        let qp = self.build_qp(x, tick, &warm);
        let Some(chol) = qp.hessian.clone().cholesky() else {
            self.last = SolveReport {
                iterations: 0,
                residual: f64::INFINITY,
                fell_back: true,
            };
            return warm;
        };
        let mut u = chol.solve(&(-&qp.gradient));
        let mut residual = qp.kkt_residual(&u);
        let mut iterations = 1;
        while residual > self.settings.budget.step_tolerance
            && iterations < self.settings.budget.max_iterations
            && residual.is_finite()
        {
            let r = &qp.hessian * &u + &qp.gradient;
            u -= chol.solve(&r);
            residual = qp.kkt_residual(&u);
            iterations += 1;
        }
        let finite = u.iter().all(|v| v.is_finite());
        self.last = SolveReport {
            iterations,
            residual,
            fell_back: !finite,
        };
        if !finite {
            return warm;
        }
        (0..n).map(|i| Input::new(u[2 * i], u[2 * i + 1])).collect()
    }
}

impl Controller for EdgeController {
    fn tier(&self) -> Tier {
        Tier::Edge
    }

    fn solve(&mut self, x: &State, tick: u64, warm_start: Option<&[Input]>) -> Vec<Input> {
        self.optimize(x, tick, warm_start)
    }
}
