//! Discrete-time plant models.
//!
//! The workhorse is the kinematic bicycle, sampled with a forward-Euler step.
//! Everything above this module (costs, controllers, the remote compensator)
//! talks to the plant only through [`PlantModel`], so the prediction helpers
//! here are generic over the state and input dimensions.

use nalgebra::{Matrix4, Matrix4x2, SVector, Vector2, Vector4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bicycle state `[px, py, heading, speed]`.
pub type State = Vector4<f64>;
/// Bicycle input `[slip angle β, acceleration a]`.
pub type Input = Vector2<f64>;

pub const PX: usize = 0;
pub const PY: usize = 1;
pub const HEADING: usize = 2;
pub const SPEED: usize = 3;
pub const SLIP: usize = 0;
pub const ACCEL: usize = 1;

/// A discrete-time model `x⁺ = f(x, u) + w` with additive disturbance.
pub trait PlantModel<const N: usize, const M: usize> {
    /// One nominal step `f(x, u)`.
    fn nominal_step(&self, x: &SVector<f64, N>, u: &SVector<f64, M>) -> SVector<f64, N>;

    /// One disturbed step `f(x, u) + w`.
    fn step(
        &self,
        x: &SVector<f64, N>,
        u: &SVector<f64, M>,
        w: &SVector<f64, N>,
    ) -> SVector<f64, N> {
        self.nominal_step(x, u) + w
    }
}

/// Kinematic bicycle model with the slip angle as steering input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bicycle {
    /// Sampling period `T` in seconds.
    pub dt: f64,
    /// Distance from the centre of mass to the rear axle, `L_r`.
    pub rear_axle: f64,
    /// Distance from the centre of mass to the front axle, `L_f`.
    pub front_axle: f64,
}

impl Default for Bicycle {
    fn default() -> Self {
        Self {
            dt: 0.01,
            rear_axle: 0.5,
            front_axle: 0.5,
        }
    }
}

impl Bicycle {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.dt) && ok(self.rear_axle) && ok(self.front_axle) {
            Ok(())
        } else {
            Err(Error::Config(
                "bicycle dt and axle lengths must be positive".into(),
            ))
        }
    }

    /// Jacobians `(∂f/∂x, ∂f/∂u)` of the nominal step at `(x, u)`.
    pub fn jacobians(&self, x: &State, u: &Input) -> (Matrix4<f64>, Matrix4x2<f64>) {
        let t = self.dt;
        let v = x[SPEED];
        let (s, c) = (x[HEADING] + u[SLIP]).sin_cos();
        let (sb, cb) = u[SLIP].sin_cos();
        #[rustfmt::skip]
        let a = Matrix4::new(
            1.0, 0.0, -t * v * s, t * c,
            0.0, 1.0,  t * v * c, t * s,
            0.0, 0.0,  1.0,       t * sb / self.rear_axle,
            0.0, 0.0,  0.0,       1.0,
        );
        #[rustfmt::skip]
        let b = Matrix4x2::new(
            -t * v * s,                   0.0,
             t * v * c,                   0.0,
             t * v * cb / self.rear_axle, 0.0,
             0.0,                         t,
        );
        (a, b)
    }

    /// Front-wheel steering angle to slip angle.
    pub fn slip_from_steering(&self, delta: f64) -> f64 {
        steering_to_slip(delta, self.rear_axle, self.front_axle)
    }
}

impl PlantModel<4, 2> for Bicycle {
    #[inline]
    fn nominal_step(&self, x: &State, u: &Input) -> State {
        let t = self.dt;
        let (v, course) = (x[SPEED], x[HEADING] + u[SLIP]);
        let (s, c) = course.sin_cos();
        State::new(
            x[PX] + t * v * c,
            x[PY] + t * v * s,
            x[HEADING] + t * v / self.rear_axle * u[SLIP].sin(),
            v + t * u[ACCEL],
        )
    }
}

/// One nominal bicycle step, rejecting non-finite states.
///
/// ```
/// use tiered_control::dynamics::{bicycle_step, State, Input};
/// let x = bicycle_step(&State::new(0.0, 0.0, 0.0, 1.0), &Input::zeros(), 0.01, 0.5).unwrap();
/// assert!((x[0] - 0.01).abs() < 1e-15);
/// ```
pub fn bicycle_step(x: &State, u: &Input, dt: f64, rear_axle: f64) -> Result<State> {
    if !x.iter().chain(u.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFiniteState);
    }
    let model = Bicycle {
        dt,
        rear_axle,
        front_axle: rear_axle,
    };
    Ok(model.nominal_step(x, u))
}

/// `β = atan(L_r / (L_r + L_f) · tan δ)`.
pub fn steering_to_slip(delta: f64, rear_axle: f64, front_axle: f64) -> f64 {
    (rear_axle / (rear_axle + front_axle) * delta.tan()).atan()
}

/// Adds a disturbance to a dynamically sized state.
pub fn apply_disturbance(x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    if x.len() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: w.len(),
        });
    }
    Ok(x.iter().zip(w).map(|(a, b)| a + b).collect())
}

/// Bounded additive disturbance, uniform per component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceModel<const N: usize> {
    bounds: Option<SVector<f64, N>>,
}

impl<const N: usize> DisturbanceModel<N> {
    pub fn none() -> Self {
        Self { bounds: None }
    }

    pub fn uniform(bounds: SVector<f64, N>) -> Result<Self> {
        if bounds.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::Config(
                "disturbance bounds must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            bounds: Some(bounds),
        })
    }

    pub fn bounds(&self) -> SVector<f64, N> {
        self.bounds.unwrap_or_else(SVector::zeros)
    }

    pub fn is_active(&self) -> bool {
        self.bounds.is_some_and(|b| b.iter().any(|v| *v > 0.0))
    }

    /// Euclidean norm of the worst-case (corner) disturbance.
    pub fn max_norm(&self) -> f64 {
        self.bounds().norm()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SVector<f64, N> {
        match self.bounds {
            None => SVector::zeros(),
            Some(b) => SVector::from_fn(|i, _| {
                if b[i] > 0.0 {
                    rng.random_range(-b[i]..=b[i])
                } else {
                    0.0
                }
            }),
        }
    }
}

/// Applies the first `steps` inputs of `seq` nominally, starting from `x`.
pub fn predict<P, const N: usize, const M: usize>(
    model: &P,
    x: &SVector<f64, N>,
    seq: &[SVector<f64, M>],
    steps: usize,
) -> Result<SVector<f64, N>>
where
    P: PlantModel<N, M>,
{
    if steps > seq.len() {
        return Err(Error::HorizonExceeded {
            requested: steps,
            available: seq.len(),
        });
    }
    Ok(seq[..steps]
        .iter()
        .fold(*x, |z, u| model.nominal_step(&z, u)))
}

/// All states visited when applying `seq` from `x`, including `x` itself.
pub fn rollout<P, const N: usize, const M: usize>(
    model: &P,
    x: &SVector<f64, N>,
    seq: &[SVector<f64, M>],
) -> Vec<SVector<f64, N>>
where
    P: PlantModel<N, M>,
{
    let mut out = Vec::with_capacity(seq.len() + 1);
    out.push(*x);
    let mut z = *x;
    for u in seq {
        z = model.nominal_step(&z, u);
        out.push(z);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn straight_line_coasting() {
        let x = bicycle_step(&State::new(0.0, 0.0, 0.0, 1.0), &Input::zeros(), 0.01, 0.5).unwrap();
        assert_relative_eq!(x, State::new(0.01, 0.0, 0.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn quarter_turn_slip_only_turns_heading() {
        let x = bicycle_step(
            &State::new(0.0, 0.0, 0.0, 1.0),
            &Input::new(std::f64::consts::FRAC_PI_2, 0.0),
            0.01,
            0.5,
        )
        .unwrap();
        assert_relative_eq!(x[PX], 0.0, epsilon = 1e-15);
        assert_relative_eq!(x[PY], 0.01, epsilon = 1e-15);
        assert_relative_eq!(x[HEADING], 0.02, epsilon = 1e-15);
        assert_relative_eq!(x[SPEED], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn acceleration_from_rest() {
        let x = bicycle_step(&State::zeros(), &Input::new(0.0, 2.0), 0.01, 0.5).unwrap();
        assert_relative_eq!(x, State::new(0.0, 0.0, 0.0, 0.02), epsilon = 1e-15);
    }

    #[test]
    fn jacobians_match_central_differences() {
        let m = Bicycle::default();
        let x = State::new(1.0, -2.0, 0.7, 1.3);
        let u = Input::new(0.2, -0.4);
        let (a, b) = m.jacobians(&x, &u);
        let h = 1e-6;
        for j in 0..4 {
            let mut e = State::zeros();
            e[j] = h;
            let col = (m.nominal_step(&(x + e), &u) - m.nominal_step(&(x - e), &u)) / (2.0 * h);
            assert_relative_eq!(col, a.column(j).into_owned(), epsilon = 1e-8);
        }
        for j in 0..2 {
            let mut e = Input::zeros();
            e[j] = h;
            let col = (m.nominal_step(&x, &(u + e)) - m.nominal_step(&x, &(u - e))) / (2.0 * h);
            assert_relative_eq!(col, b.column(j).into_owned(), epsilon = 1e-8);
        }
    }

    #[test]
    fn non_finite_rejected() {
        let x = State::new(f64::NAN, 0.0, 0.0, 0.0);
        assert_eq!(
            bicycle_step(&x, &Input::zeros(), 0.01, 0.5),
            Err(Error::NonFiniteState)
        );
    }

    #[test]
    fn zero_disturbance_is_identity() {
        let x = [1.0, -2.0, 0.3, 4.0];
        assert_eq!(apply_disturbance(&x, &[0.0; 4]).unwrap(), x.to_vec());
        assert!(matches!(
            apply_disturbance(&x, &[0.0; 3]),
            Err(Error::DimensionMismatch { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn disturbance_samples_respect_bounds() {
        let b = State::new(0.5, 0.5, 0.1, 0.1);
        let d = DisturbanceModel::uniform(b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let w = d.sample(&mut rng);
            for i in 0..4 {
                assert!(w[i].abs() <= b[i]);
            }
        }
        assert_eq!(DisturbanceModel::<4>::none().sample(&mut rng), State::zeros());
    }

    #[test]
    fn steering_symmetric_axles() {
        let b = steering_to_slip(0.3, 0.5, 0.5);
        assert_relative_eq!(b, (0.5 * 0.3f64.tan()).atan(), epsilon = 1e-15);
        assert_eq!(steering_to_slip(0.0, 0.5, 0.5), 0.0);
    }

    #[test]
    fn predict_zero_steps_and_overflow() {
        let m = Bicycle::default();
        let x = State::new(1.0, 2.0, 0.3, 0.5);
        let seq = vec![Input::new(0.1, 0.2); 5];
        assert_eq!(predict(&m, &x, &seq, 0).unwrap(), x);
        assert!(matches!(
            predict(&m, &x, &seq, 6),
            Err(Error::HorizonExceeded { requested: 6, available: 5 })
        ));
        let r = rollout(&m, &x, &seq);
        assert_eq!(r.len(), 6);
        assert_eq!(r[5], predict(&m, &x, &seq, 5).unwrap());
    }

    /// A scalar linear model to confirm the prediction helpers are generic.
    struct Scalar;
    impl PlantModel<1, 1> for Scalar {
        fn nominal_step(&self, x: &SVector<f64, 1>, u: &SVector<f64, 1>) -> SVector<f64, 1> {
            x * 0.5 + u
        }
    }

    #[test]
    fn generic_over_dimensions() {
        let seq = vec![SVector::<f64, 1>::new(1.0); 3];
        // 0 -> 1 -> 1.5 -> 1.75
        let z = predict(&Scalar, &SVector::<f64, 1>::new(0.0), &seq, 3).unwrap();
        assert_eq!(z[0], 1.75);
    }
}
