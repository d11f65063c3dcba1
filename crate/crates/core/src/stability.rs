//! Runtime checks of the Lyapunov decrease and sampled Lipschitz constants.
//!
//! With the selection cost `V_N` as Lyapunov candidate, every tick should
//! satisfy
//!
//! ```text
//! V_N(k+1) − V_N(k) ≤ −C(x(k), b_0(k)) + η(ε)
//! ```
//!
//! where `η(ε) = Σ_{i=0}^{N−2} L_C · L_f,x^i · ε` absorbs the disturbance.
//! The constants are estimated by sampling, so they are lower bounds of the
//! true ones; they are used for reporting only.

use nalgebra::SVector;
use rand::Rng;
use serde::Serialize;

use crate::dynamics::PlantModel;
use crate::error::{Error, Result};

/// Tolerance absorbing floating-point error in the decrease check.
pub const DECREASE_TOLERANCE: f64 = 1e-7;

/// Sampled constants of the stability assumptions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct AssumptionEstimates {
    pub lipschitz_fx: f64,
    pub lipschitz_fu: f64,
    pub lipschitz_cost: f64,
    /// Largest one-step deviation caused by the disturbance.
    pub epsilon: f64,
    /// Decrease slack `η(ε)`.
    pub eta: f64,
    /// Cost pairs skipped because the cost was undefined at one end.
    pub skipped_cost_pairs: u64,
}

/// `Σ_{i=0}^{N−2} L_C L_fx^i ε`.
pub fn eta_of_epsilon(lipschitz_cost: f64, lipschitz_fx: f64, epsilon: f64, horizon: usize) -> f64 {
    (0..horizon.saturating_sub(1))
        .map(|i| lipschitz_cost * lipschitz_fx.powi(i as i32) * epsilon)
        .sum()
}

/// Axis-aligned box of states and inputs to sample from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingRegion<const N: usize, const M: usize> {
    pub state_lo: SVector<f64, N>,
    pub state_hi: SVector<f64, N>,
    pub input_lo: SVector<f64, M>,
    pub input_hi: SVector<f64, M>,
}

impl<const N: usize, const M: usize> SamplingRegion<N, M> {
    fn validate(&self) -> Result<()> {
        let ok = self.state_lo.iter().zip(self.state_hi.iter()).all(|(l, h)| h > l)
            && self.input_lo.iter().zip(self.input_hi.iter()).all(|(l, h)| h > l);
        if ok {
            Ok(())
        } else {
            Err(Error::DegenerateRegion)
        }
    }

    fn state<R: Rng + ?Sized>(&self, rng: &mut R) -> SVector<f64, N> {
        SVector::from_fn(|i, _| rng.random_range(self.state_lo[i]..self.state_hi[i]))
    }

    fn input<R: Rng + ?Sized>(&self, rng: &mut R) -> SVector<f64, M> {
        SVector::from_fn(|i, _| rng.random_range(self.input_lo[i]..self.input_hi[i]))
    }

    /// A second point near `x`, a small fraction of the box away.
    fn near_state<R: Rng + ?Sized>(&self, x: &SVector<f64, N>, rng: &mut R) -> SVector<f64, N> {
        SVector::from_fn(|i, _| x[i] + 1e-3 * (self.state_hi[i] - self.state_lo[i]) * rng.random_range(-1.0..1.0))
    }

    fn near_input<R: Rng + ?Sized>(&self, u: &SVector<f64, M>, rng: &mut R) -> SVector<f64, M> {
        SVector::from_fn(|i, _| u[i] + 1e-3 * (self.input_hi[i] - self.input_lo[i]) * rng.random_range(-1.0..1.0))
    }
}

/// Estimates the Lipschitz constants as maxima of difference quotients.
///
/// Half of the pairs are independent draws from the box, half are local
/// perturbations, which catch the steepest directions much sooner.  `stage`
/// may return `None` where the cost should not be compared (e.g. across the
/// obstacle indicator); those pairs are counted and skipped.  `horizon` is
/// the `N` used for `η(ε)`.
pub fn estimate_constants<P, F, R, const N: usize, const M: usize>(
    model: &P,
    stage: F,
    disturbance_bounds: &SVector<f64, N>,
    region: &SamplingRegion<N, M>,
    samples: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<AssumptionEstimates>
where
    P: PlantModel<N, M>,
    F: Fn(&SVector<f64, N>, &SVector<f64, M>) -> Option<f64>,
    R: Rng + ?Sized,
{
    if samples < 2 {
        return Err(Error::Config("need at least two samples".into()));
    }
    region.validate()?;
    let mut est = AssumptionEstimates::default();
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };

    for k in 0..samples {
        let local = k % 2 == 1;
        let x = region.state(rng);
        let u = region.input(rng);
        let (y, v) = if local {
            (region.near_state(&x, rng), region.near_input(&u, rng))
        } else {
            (region.state(rng), region.input(rng))
        };

        let fx = model.nominal_step(&x, &u);
        est.lipschitz_fx = est
            .lipschitz_fx
            .max(ratio((fx - model.nominal_step(&y, &u)).norm(), (x - y).norm()));
        est.lipschitz_fu = est
            .lipschitz_fu
            .max(ratio((fx - model.nominal_step(&x, &v)).norm(), (u - v).norm()));

        match (stage(&x, &u), stage(&y, &v)) {
            (Some(a), Some(b)) => {
                let dist = ((x - y).norm_squared() + (u - v).norm_squared()).sqrt();
                est.lipschitz_cost = est.lipschitz_cost.max(ratio((a - b).abs(), dist));
            }
            _ => est.skipped_cost_pairs += 1,
        }

        // ε: worst deviation at a corner of the disturbance box.
        let corner = SVector::<f64, N>::from_fn(|i, _| {
            if rng.random_bool(0.5) {
                disturbance_bounds[i]
            } else {
                -disturbance_bounds[i]
            }
        });
        let dev = (model.step(&x, &u, &corner) - fx).norm();
        est.epsilon = est.epsilon.max(dev);
    }
    est.eta = eta_of_epsilon(est.lipschitz_cost, est.lipschitz_fx, est.epsilon, horizon);
    Ok(est)
}

/// Per-tick inputs to the decrease check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovSample {
    pub value: f64,
    pub stage_cost: f64,
    /// The actual trajectory stays clear of the obstacle over this tick.
    pub obstacle_free: bool,
}

/// Outcome of [`check_decrease`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecreaseReport {
    pub ticks_checked: usize,
    pub eta: f64,
    pub tolerance: f64,
    /// Ticks on obstacle-free segments whose residual exceeds `η + tol`.
    pub violations: Vec<u64>,
    /// Same, for ticks that touch the obstacle (reported separately).
    pub obstacle_violations: Vec<u64>,
    pub max_residual: f64,
    /// `V_N` never increased.
    pub monotone: bool,
}

impl DecreaseReport {
    pub fn violation_count(&self) -> usize {
        self.violations.len()
    }
}

/// `V(k+1) − V(k) + C(x(k), b_0(k))` for every consecutive pair.
pub fn residuals(trace: &[LyapunovSample]) -> Vec<f64> {
    trace
        .windows(2)
        .map(|w| w[1].value - w[0].value + w[0].stage_cost)
        .collect()
}

/// Flags every tick whose decrease residual exceeds `eta + tolerance`.
pub fn check_decrease(trace: &[LyapunovSample], eta: f64, tolerance: f64) -> Result<DecreaseReport> {
    if trace.len() < 2 {
        return Err(Error::TraceTooShort(2));
    }
    let res = residuals(trace);
    let mut report = DecreaseReport {
        ticks_checked: res.len(),
        eta,
        tolerance,
        violations: Vec::new(),
        obstacle_violations: Vec::new(),
        max_residual: f64::NEG_INFINITY,
        monotone: true,
    };
    for (k, r) in res.iter().enumerate() {
        report.max_residual = report.max_residual.max(*r);
        if trace[k + 1].value > trace[k].value {
            report.monotone = false;
        }
        if !(*r <= eta + tolerance) {
            if trace[k].obstacle_free && trace[k + 1].obstacle_free {
                report.violations.push(k as u64);
            } else {
                report.obstacle_violations.push(k as u64);
            }
        }
    }
    Ok(report)
}
