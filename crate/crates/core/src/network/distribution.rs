use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as StdNormal};

use crate::error::{Error, Result};

/// Continuous one-way delay law, in ticks.
///
/// Samples are clamped at zero and rounded up to whole ticks, so a delay is
/// "late" for a budget of `D` ticks exactly when the continuous draw exceeds
/// `D`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelayDistribution {
    Exponential { rate: f64 },
    Normal { mean: f64, std_dev: f64 },
    LogNormal { mu: f64, sigma: f64 },
    Degenerate { ticks: f64 },
}

/// Parametric family, for building a law from a target loss probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayFamily {
    Exponential,
    Normal,
    LogNormal,
}

fn std_normal() -> StdNormal {
    StdNormal::new(0.0, 1.0).expect("standard normal")
}

/// `Φ⁻¹(p)`.
///
/// statrs' inverse is good to about 1e-11; two Newton steps on `Φ` bring it
/// to round-off.
pub fn standard_normal_quantile(p: f64) -> f64 {
    let n = std_normal();
    let mut z = n.inverse_cdf(p);
    if z.is_finite() {
        for _ in 0..2 {
            // Work on the smaller tail to keep the residual accurate.
            let r = if z > 0.0 { (1.0 - p) - n.sf(z) } else { n.cdf(z) - p };
            z -= r / n.pdf(z);
        }
    }
    z
}

fn check_probability(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::Probability(p))
    }
}

impl DelayDistribution {
    pub fn validate(&self) -> Result<()> {
        let bad = |s: &str| Err(Error::Distribution(s.into()));
        match *self {
            Self::Exponential { rate } if !(rate > 0.0 && rate.is_finite()) => bad("rate must be positive"),
            Self::Normal { mean, std_dev } if !(mean.is_finite() && std_dev >= 0.0 && std_dev.is_finite()) => {
                bad("normal needs finite mean and std_dev ≥ 0")
            }
            Self::LogNormal { mu, sigma } if !(mu.is_finite() && sigma >= 0.0 && sigma.is_finite()) => {
                bad("lognormal needs finite mu and sigma ≥ 0")
            }
            Self::Degenerate { ticks } if !ticks.is_finite() => bad("degenerate delay must be finite"),
            _ => Ok(()),
        }
    }

    /// One draw from the continuous law (before clamping and rounding).
    pub fn sample_continuous<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Exponential { rate } => Exp::new(rate).map_or(f64::INFINITY, |d| d.sample(rng)),
            Self::Normal { mean, std_dev } => Normal::new(mean, std_dev).map_or(mean, |d| d.sample(rng)),
            Self::LogNormal { mu, sigma } => LogNormal::new(mu, sigma).map_or(mu.exp(), |d| d.sample(rng)),
            Self::Degenerate { ticks } => ticks,
        }
    }

    /// One delay in whole ticks: `⌈max(d, 0)⌉`.
    ///
    /// ```
    /// use tiered_control::network::DelayDistribution;
    /// let mut rng = rand::rng();
    /// assert_eq!(DelayDistribution::Degenerate { ticks: 3.0 }.sample_delay(&mut rng), 3);
    /// ```
    pub fn sample_delay<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let d = self.sample_continuous(rng).max(0.0).ceil();
        // Saturating float-to-int conversion; NaN maps to zero, so guard it.
        if d.is_nan() {
            u64::MAX
        } else {
            d as u64
        }
    }

    /// `Pr(d > budget)` under the continuous law.
    pub fn tail_probability(&self, budget: f64) -> f64 {
        match *self {
            Self::Exponential { rate } => {
                if budget <= 0.0 {
                    1.0
                } else {
                    (-rate * budget).exp()
                }
            }
            Self::Normal { mean, std_dev } => {
                if std_dev == 0.0 {
                    f64::from(u8::from(mean > budget))
                } else {
                    std_normal().sf((budget - mean) / std_dev)
                }
            }
            Self::LogNormal { mu, sigma } => {
                if budget <= 0.0 {
                    1.0
                } else if sigma == 0.0 {
                    f64::from(u8::from(mu.exp() > budget))
                } else {
                    std_normal().sf((budget.ln() - mu) / sigma)
                }
            }
            Self::Degenerate { ticks } => f64::from(u8::from(ticks > budget)),
        }
    }

    /// Loss probability for a budget of `budget` whole ticks.
    pub fn fit_loss_probability(&self, budget: u64) -> f64 {
        self.tail_probability(budget as f64)
    }

    /// The real-valued budget beyond which the tail drops to `rho`.
    ///
    /// Exponential `−ln ρ / λ`, normal `μ + σ Φ⁻¹(1 − ρ)`, log-normal
    /// `exp(μ + σ Φ⁻¹(1 − ρ))`.
    pub fn budget_bound(&self, rho: f64) -> Result<f64> {
        check_probability(rho)?;
        self.validate()?;
        let z = standard_normal_quantile(1.0 - rho);
        Ok(match *self {
            Self::Exponential { rate } => -rho.ln() / rate,
            Self::Normal { mean, std_dev } => mean + std_dev * z,
            Self::LogNormal { mu, sigma } => (mu + sigma * z).exp(),
            Self::Degenerate { ticks } => ticks,
        })
    }

    /// Smallest whole-tick budget `D ≥ 1` meeting [`Self::budget_bound`].
    ///
    /// ```
    /// use tiered_control::network::DelayDistribution;
    /// let d = DelayDistribution::Exponential { rate: 2.0 };
    /// assert_eq!(d.plan_budget(0.05).unwrap(), 2);
    /// ```
    pub fn plan_budget(&self, rho: f64) -> Result<u64> {
        let bound = self.budget_bound(rho)?;
        Ok((bound.ceil().max(1.0)) as u64)
    }

    /// The member of `family` with `Pr(d > budget) = loss`, keeping the
    /// spread parameter (`σ` for normal/log-normal) fixed.
    pub fn with_loss_probability(family: DelayFamily, loss: f64, budget: u64, spread: f64) -> Result<Self> {
        check_probability(loss)?;
        let z = standard_normal_quantile(1.0 - loss);
        let b = budget as f64;
        let dist = match family {
            DelayFamily::Exponential => {
                if budget == 0 {
                    return Err(Error::Distribution("exponential law needs a positive budget".into()));
                }
                Self::Exponential { rate: -loss.ln() / b }
            }
            DelayFamily::Normal => Self::Normal {
                mean: b - spread * z,
                std_dev: spread,
            },
            DelayFamily::LogNormal => {
                if budget == 0 {
                    return Err(Error::Distribution("log-normal law needs a positive budget".into()));
                }
                Self::LogNormal {
                    mu: b.ln() - spread * z,
                    sigma: spread,
                }
            }
        };
        dist.validate()?;
        Ok(dist)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deterministic_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = DelayDistribution::Normal { mean: 5.0, std_dev: 0.0 };
        let d = DelayDistribution::Degenerate { ticks: 3.0 };
        for _ in 0..100 {
            assert_eq!(n.sample_delay(&mut rng), 5);
            assert_eq!(d.sample_delay(&mut rng), 3);
        }
        assert_eq!(d.fit_loss_probability(4), 0.0);
        assert_eq!(d.fit_loss_probability(2), 1.0);
    }

    #[test]
    fn negative_draws_clamp_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = DelayDistribution::Normal { mean: -50.0, std_dev: 1.0 };
        assert!((0..1000).all(|_| n.sample_delay(&mut rng) == 0));
    }

    #[test]
    fn lognormal_median() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = DelayDistribution::LogNormal { mu: 0.0, sigma: 1.0 };
        let mut v: Vec<u64> = (0..1_000_000).map(|_| d.sample_delay(&mut rng)).collect();
        v.sort_unstable();
        assert_eq!(v[v.len() / 2], 1);
    }

    #[test]
    fn planner_examples() {
        assert_eq!(DelayDistribution::Exponential { rate: 2.0 }.plan_budget(0.05).unwrap(), 2);
        assert_eq!(DelayDistribution::Normal { mean: 0.0, std_dev: 1.0 }.plan_budget(0.5).unwrap(), 1);
        assert_eq!(DelayDistribution::LogNormal { mu: 0.0, sigma: 1.0 }.plan_budget(0.5).unwrap(), 1);
        assert!(matches!(
            DelayDistribution::Exponential { rate: 1.0 }.plan_budget(0.0),
            Err(Error::Probability(_))
        ));
        assert!(DelayDistribution::Exponential { rate: 1.0 }.plan_budget(1.0).is_err());
    }

    #[test]
    fn exponential_tail_inverts_bound() {
        let d = DelayDistribution::Exponential { rate: 1.0 };
        let t = d.tail_probability(-(0.2f64.ln()));
        assert!((t - 0.2).abs() < 1e-12);
    }

    #[test]
    fn scenario_inverse_hits_target_loss() {
        for (fam, spread, budget) in [
            (DelayFamily::Normal, 1.0, 2),
            (DelayFamily::LogNormal, 0.5, 4),
            (DelayFamily::Exponential, 0.0, 3),
        ] {
            for p in [0.05, 0.5, 0.8] {
                let d = DelayDistribution::with_loss_probability(fam, p, budget, spread).unwrap();
                assert!((d.fit_loss_probability(budget) - p).abs() < 1e-12, "{fam:?} {p}");
            }
        }
    }

    #[test]
    fn planned_budget_keeps_tail_below_rho() {
        for d in [
            DelayDistribution::Exponential { rate: 0.7 },
            DelayDistribution::Normal { mean: 3.0, std_dev: 2.0 },
            DelayDistribution::LogNormal { mu: 1.0, sigma: 0.6 },
        ] {
            for rho in [0.01, 0.1, 0.3] {
                let b = d.plan_budget(rho).unwrap();
                assert!(d.fit_loss_probability(b) <= rho + 1e-12);
            }
        }
    }

    #[test]
    fn validation() {
        assert!(DelayDistribution::Exponential { rate: 0.0 }.validate().is_err());
        assert!(DelayDistribution::Normal { mean: 0.0, std_dev: -1.0 }.validate().is_err());
        assert!(DelayDistribution::LogNormal { mu: 0.0, sigma: 0.0 }.validate().is_ok());
    }
}
