//! The on-board fallback: a steering/speed law that aims at a waypoint.
//!
//! The waypoint is the goal whenever the straight segment to it clears the
//! (inflated) obstacle.  Otherwise the vehicle is steered around the circle on
//! the side with the shorter detour, aiming a fixed arc ahead of the tangent
//! point so the target is always strictly in front of it.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix2, Matrix2x4};
use serde::{Deserialize, Serialize};

use super::{Controller, Tier};
use crate::costs::TaskSpec;
use crate::dynamics::{Bicycle, Input, PlantModel, State, HEADING, PX, PY, SPEED};

/// Proportional waypoint law for slip angle and acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnboardLaw {
    /// Speed gain `K_p`.
    pub gain: f64,
    /// Safety margin around the obstacle, as a fraction of its radius.
    pub margin_ratio: f64,
    /// Angle (rad) by which the detour waypoint leads the tangent point.
    pub arc_advance: f64,
}

impl Default for OnboardLaw {
    fn default() -> Self {
        Self {
            gain: 0.009,
            margin_ratio: 0.25,
            arc_advance: 0.15,
        }
    }
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Selects the point the on-board law steers towards.
///
/// `radius` is the already-inflated avoidance radius.  Deep inside the disc
/// the target is the radial exit point; between half the radius and the
/// circle it slides along the arc so that it meets the tangent-point target
/// continuously at the boundary.  Exact ties between the
/// two detour sides go to the clockwise side (the upper one when travelling in
/// `+x` past an obstacle centred on the path).
pub fn waypoint_routine(
    p: [f64; 2],
    goal: [f64; 2],
    center: [f64; 2],
    radius: f64,
    arc_advance: f64,
) -> [f64; 2] {
    let rel = [p[0] - center[0], p[1] - center[1]];
    let dist = rel[0].hypot(rel[1]);
    let on_circle = |theta: f64| {
        let (s, c) = theta.sin_cos();
        [center[0] + radius * c, center[1] + radius * s]
    };

    let g_rel = [goal[0] - center[0], goal[1] - center[1]];
    let g_dist = g_rel[0].hypot(g_rel[1]);
    if g_dist <= radius {
        return goal;
    }
    if dist == 0.0 {
        return on_circle(0.0);
    }
    if dist >= radius && segment_clears(p, goal, center, radius) {
        return goal;
    }

    let theta_p = rel[1].atan2(rel[0]);
    let theta_g = g_rel[1].atan2(g_rel[0]);
    let alpha_g = (radius / g_dist).clamp(-1.0, 1.0).acos();
    // Outside, the detour starts at the tangent point.  Inside the margin it
    // starts at the radial exit point, and the advance along the arc fades
    // out towards the middle of the disc so the target is continuous across
    // the circle.
    let (alpha, advance) = if dist >= radius {
        ((radius / dist).clamp(-1.0, 1.0).acos(), arc_advance)
    } else {
        let fade = (2.0 * dist / radius - 1.0).clamp(0.0, 1.0);
        (0.0, fade * arc_advance)
    };

    // Clockwise: enter at θp − α, leave at θg + αg, with decreasing angle.
    let cw_enter = theta_p - alpha;
    let cw_arc = (cw_enter - (theta_g + alpha_g)).rem_euclid(TAU);
    // Counter-clockwise: enter at θp + α, leave at θg − αg.
    let ccw_enter = theta_p + alpha;
    let ccw_arc = ((theta_g - alpha_g) - ccw_enter).rem_euclid(TAU);

    // The straight legs have equal length on both sides; only the arcs differ.
    if cw_arc <= ccw_arc {
        on_circle(cw_enter - advance.min(cw_arc))
    } else {
        on_circle(ccw_enter + advance.min(ccw_arc))
    }
}

/// True if the closed segment `a → b` stays at distance ≥ `radius` from `c`.
fn segment_clears(a: [f64; 2], b: [f64; 2], c: [f64; 2], radius: f64) -> bool {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((c[0] - a[0]) * d[0] + (c[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    };
    let q = [a[0] + t * d[0] - c[0], a[1] + t * d[1] - c[1]];
    q[0].hypot(q[1]) >= radius
}

impl OnboardLaw {
    pub fn waypoint(&self, p: [f64; 2], task: &TaskSpec) -> [f64; 2] {
        match &task.obstacle {
            None => task.goal,
            Some(ob) => waypoint_routine(
                p,
                task.goal,
                ob.center,
                ob.radius * (1.0 + self.margin_ratio),
                self.arc_advance,
            ),
        }
    }

    /// Control input at `x`.
    ///
    /// Steers the velocity vector onto the line towards the waypoint, driving
    /// backwards when the waypoint is behind, and regulates the signed speed
    /// along that line with `a = K_p (s − v)`, where `s` is the signed
    /// distance to the waypoint.
    ///
    /// ```
    /// use tiered_control::controllers::onboard::OnboardLaw;
    /// use tiered_control::costs::TaskSpec;
    /// use tiered_control::dynamics::State;
    /// let task = TaskSpec { goal: [1.0, 0.0], ..TaskSpec::default() }.without_obstacle();
    /// let u = OnboardLaw::default().input(&State::zeros(), &task);
    /// assert_eq!(u[0], 0.0);
    /// assert!((u[1] - 0.009).abs() < 1e-15);
    /// ```
    pub fn input(&self, x: &State, task: &TaskSpec) -> Input {
        let q = self.waypoint([x[PX], x[PY]], task);
        self.input_towards(x, q)
    }

    /// Control input aiming at a fixed waypoint `q`.
    pub fn input_towards(&self, x: &State, q: [f64; 2]) -> Input {
        let (dx, dy) = (q[0] - x[PX], q[1] - x[PY]);
        let d = dx.hypot(dy);
        if d == 0.0 {
            return Input::new(0.0, -self.gain * x[SPEED]);
        }
        let theta = wrap_angle(dy.atan2(dx) - x[HEADING]);
        let (slip, signed) = if theta.abs() <= PI / 2.0 {
            (theta, d)
        } else {
            (wrap_angle(theta - PI), -d)
        };
        Input::new(slip, self.gain * (signed - x[SPEED]))
    }

    /// Jacobian `∂u/∂x` of [`Self::input_towards`] with the waypoint held fixed.
    pub fn input_jacobian(&self, x: &State, q: [f64; 2]) -> Matrix2x4<f64> {
        let (dx, dy) = (q[0] - x[PX], q[1] - x[PY]);
        let d = dx.hypot(dy);
        let k = self.gain;
        if d == 0.0 {
            return Matrix2x4::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -k);
        }
        let theta = wrap_angle(dy.atan2(dx) - x[HEADING]);
        let sign = if theta.abs() <= PI / 2.0 { 1.0 } else { -1.0 };
        let d2 = d * d;
        #[rustfmt::skip]
        let j = Matrix2x4::new(
            dy / d2,               -dx / d2,              -1.0, 0.0,
            -k * sign * dx / d,    -k * sign * dy / d,    0.0,  -k,
        );
        j
    }

    /// Jacobian of [`Self::waypoint`] with respect to the position.
    ///
    /// The waypoint is piecewise smooth in `p`: it jumps to the goal when the
    /// straight path clears the obstacle.  Both one-sided differences are
    /// taken and the smaller one kept, which ignores a jump lying within the
    /// difference step.
    pub fn waypoint_jacobian(&self, p: [f64; 2], task: &TaskSpec) -> Matrix2<f64> {
        if task.obstacle.is_none() {
            return Matrix2::zeros();
        }
        let h = 1e-7;
        let q0 = self.waypoint(p, task);
        let mut j = Matrix2::zeros();
        for c in 0..2 {
            let (mut hi, mut lo) = (p, p);
            hi[c] += h;
            lo[c] -= h;
            let (a, b) = (self.waypoint(hi, task), self.waypoint(lo, task));
            let fwd = [(a[0] - q0[0]) / h, (a[1] - q0[1]) / h];
            let bwd = [(q0[0] - b[0]) / h, (q0[1] - b[1]) / h];
            let col = if fwd[0].hypot(fwd[1]) <= bwd[0].hypot(bwd[1]) { fwd } else { bwd };
            j[(0, c)] = col[0];
            j[(1, c)] = col[1];
        }
        j
    }

    /// Full Jacobian `∂u/∂x` of [`Self::input`], waypoint motion included.
    pub fn closed_loop_jacobian(&self, x: &State, task: &TaskSpec) -> Matrix2x4<f64> {
        let p = [x[PX], x[PY]];
        let q = self.waypoint(p, task);
        let mut j = self.input_jacobian(x, q);
        // u depends on p − q, so ∂u/∂q is minus the position block.
        let pos = j.fixed_view::<2, 2>(0, 0).into_owned();
        let dq = self.waypoint_jacobian(p, task);
        let mut block = j.fixed_view_mut::<2, 2>(0, 0);
        block -= pos * dq;
        j
    }

    /// Closed-loop nominal rollout of `n` inputs from `x`.
    ///
    /// Returns the inputs together with the state reached after applying them.
    pub fn rollout(&self, model: &Bicycle, x: &State, task: &TaskSpec, n: usize) -> (Vec<Input>, State) {
        let mut seq = Vec::with_capacity(n);
        let mut z = *x;
        for _ in 0..n {
            let u = self.input(&z, task);
            z = model.nominal_step(&z, &u);
            seq.push(u);
        }
        (seq, z)
    }

    /// Length-`n` on-board input sequence from `x`.
    pub fn solve(&self, model: &Bicycle, x: &State, task: &TaskSpec, n: usize) -> Vec<Input> {
        self.rollout(model, x, task, n).0
    }
}

/// The on-board law wrapped as a [`Controller`].
#[derive(Debug, Clone)]
pub struct OnboardController {
    pub law: OnboardLaw,
    pub model: Bicycle,
    pub task: TaskSpec,
    pub horizon: usize,
}

impl Controller for OnboardController {
    fn tier(&self) -> Tier {
        Tier::Onboard
    }

    fn solve(&mut self, x: &State, _tick: u64, _warm_start: Option<&[Input]>) -> Vec<Input> {
        self.law.solve(&self.model, x, &self.task, self.horizon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::Obstacle;

    fn open_task(goal: [f64; 2]) -> TaskSpec {
        TaskSpec {
            goal,
            ..TaskSpec::default()
        }
        .without_obstacle()
    }

    #[test]
    fn straight_ahead_from_rest() {
        let law = OnboardLaw::default();
        let u = law.input(&State::zeros(), &open_task([1.0, 0.0]));
        assert_eq!(u[0], 0.0);
        assert!((u[1] - law.gain).abs() < 1e-15);
    }

    #[test]
    fn waypoint_reached_only_brakes() {
        let law = OnboardLaw::default();
        let u = law.input(&State::new(1.0, 0.0, 0.0, 2.0), &open_task([1.0, 0.0]));
        assert_eq!(u, Input::new(0.0, -2.0 * law.gain));
    }

    #[test]
    fn reverses_towards_a_goal_behind() {
        let law = OnboardLaw::default();
        let u = law.input(&State::new(2.0, 0.0, 0.0, 0.0), &open_task([1.0, 0.0]));
        assert!(u[0].abs() < 1e-15);
        assert!((u[1] + law.gain).abs() < 1e-15);
    }

    #[test]
    fn detour_waypoint_is_off_axis_and_outside() {
        let c = [0.0, 0.0];
        let q = waypoint_routine([-2.0, 0.0], [2.0, 0.0], c, 1.25, 0.15);
        assert!(q[1].abs() > 0.1);
        assert!(q[0].hypot(q[1]) >= 1.0);
        // Ties go to the upper side.
        assert!(q[1] > 0.0);
    }

    #[test]
    fn shorter_side_is_chosen() {
        // Start slightly below the axis: the lower side is shorter.
        let q = waypoint_routine([-3.0, -0.3], [3.0, 0.0], [0.0, 0.0], 1.0, 0.1);
        assert!(q[1] < 0.0);
    }

    #[test]
    fn clear_segment_returns_goal() {
        let q = waypoint_routine([-3.0, 5.0], [3.0, 5.0], [0.0, 0.0], 1.0, 0.1);
        assert_eq!(q, [3.0, 5.0]);
    }

    #[test]
    fn inside_margin_exits_radially() {
        let q = waypoint_routine([0.5, 0.0], [3.0, 0.0], [0.0, 0.0], 1.0, 0.1);
        assert_eq!(q, [1.0, 0.0]);
    }

    #[test]
    fn target_is_continuous_across_the_margin() {
        let (c, g) = ([0.0, 0.0], [4.0, 0.3]);
        let radial = [-1.0f64, 0.0];
        let at = |rho: f64| waypoint_routine([rho * radial[0], rho * radial[1]], g, c, 1.0, 0.15);
        let (inside, outside) = (at(1.0 - 1e-9), at(1.0 + 1e-9));
        assert!((inside[0] - outside[0]).hypot(inside[1] - outside[1]) < 1e-3);
        // And it moves smoothly, not in jumps, along a radial sweep.
        let mut prev = at(0.55);
        for i in 1..=200 {
            let q = at(0.55 + i as f64 * 0.005);
            // The tangent angle grows like the square root of the distance
            // to the circle, so allow for that rather than a Lipschitz step.
            assert!((q[0] - prev[0]).hypot(q[1] - prev[1]) < 0.15, "jump at step {i}");
            prev = q;
        }
    }

    #[test]
    fn deterministic() {
        let law = OnboardLaw::default();
        let task = TaskSpec {
            obstacle: Some(Obstacle {
                center: [5.0, 0.2],
                radius: 1.0,
            }),
            goal: [10.0, 0.0],
            ..TaskSpec::default()
        };
        let m = Bicycle::default();
        let x = State::new(0.0, 0.0, 0.1, 0.5);
        assert_eq!(law.solve(&m, &x, &task, 25), law.solve(&m, &x, &task, 25));
    }

    #[test]
    fn obstacle_free_closed_loop_converges() {
        let law = OnboardLaw::default();
        let task = open_task([5.0, 0.0]);
        let m = Bicycle::default();
        let mut x = State::zeros();
        let mut reached = None;
        for k in 0..400_000 {
            if (x[PX] - 5.0).hypot(x[PY]) <= 0.1 {
                reached = Some(k);
                break;
            }
            x = m.nominal_step(&x, &law.input(&x, &task));
        }
        assert!(reached.is_some(), "final state {x:?}");
    }

    #[test]
    fn input_jacobian_matches_differences() {
        let law = OnboardLaw::default();
        let q = [3.0, 1.0];
        for x in [State::new(0.0, 0.0, 0.2, 0.5), State::new(4.0, 1.5, 0.1, -0.3)] {
            let j = law.input_jacobian(&x, q);
            let h = 1e-6;
            for c in 0..4 {
                let mut e = State::zeros();
                e[c] = h;
                let fd = (law.input_towards(&(x + e), q) - law.input_towards(&(x - e), q)) / (2.0 * h);
                assert!((fd - j.column(c)).amax() < 1e-7, "column {c}: {fd:?} vs {:?}", j.column(c));
            }
        }
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }
}
