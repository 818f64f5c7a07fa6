//! Variance-preserving noise schedules and timestep plans.
//!
//! Time is continuous and normalized to `[0, 1]`. A schedule provides
//! `alpha_t`, `sigma_t` with `alpha_t^2 + sigma_t^2 = 1` and the derivative of
//! the noise-to-signal ratio `sigma_t / alpha_t`, which is the only schedule
//! quantity the probability-flow ODE needs once it is written in terms of
//! `x_t / alpha_t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseSchedule {
    /// `beta(t) = beta_min + t (beta_max - beta_min)`, `alpha_t = exp(-1/2 int_0^t beta)`.
    VariancePreservingLinearBeta { beta_min: f64, beta_max: f64 },
    /// `alpha_t = cos(pi/2 (t+s)/(1+s)) / cos(pi/2 s/(1+s))`.
    VariancePreservingCosine { offset: f64 },
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::VariancePreservingLinearBeta {
            beta_min: 0.1,
            beta_max: 20.0,
        }
    }
}

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Domain(format!("t = {t} outside [0, 1]")))
    }
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSchedule::VariancePreservingLinearBeta { beta_min, beta_max } => {
                if !(beta_min > 0.0 && beta_max >= beta_min && beta_max.is_finite()) {
                    return Err(Error::Config(format!(
                        "linear-beta schedule needs 0 < beta_min <= beta_max, got ({beta_min}, {beta_max})"
                    )));
                }
            }
            NoiseSchedule::VariancePreservingCosine { offset } => {
                if !(offset > 0.0 && offset.is_finite()) {
                    return Err(Error::Config(format!(
                        "cosine schedule offset must be positive, got {offset}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn log_alpha_unchecked(&self, t: f64) -> f64 {
        match *self {
            NoiseSchedule::VariancePreservingLinearBeta { beta_min, beta_max } => {
                -0.5 * (beta_min * t + 0.5 * (beta_max - beta_min) * t * t)
            }
            NoiseSchedule::VariancePreservingCosine { offset } => {
                let half_pi = std::f64::consts::FRAC_PI_2;
                let u = half_pi * (t + offset) / (1.0 + offset);
                let u0 = half_pi * offset / (1.0 + offset);
                u.cos().ln() - u0.cos().ln()
            }
        }
    }

    /// `d log(alpha_t) / dt`, always <= 0.
    fn dlog_alpha_unchecked(&self, t: f64) -> f64 {
        match *self {
            NoiseSchedule::VariancePreservingLinearBeta { beta_min, beta_max } => {
                -0.5 * (beta_min + (beta_max - beta_min) * t)
            }
            NoiseSchedule::VariancePreservingCosine { offset } => {
                let scale = std::f64::consts::FRAC_PI_2 / (1.0 + offset);
                -scale * (scale * (t + offset)).tan()
            }
        }
    }

    pub fn log_alpha(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.log_alpha_unchecked(t))
    }

    /// `(alpha_t, sigma_t)`.
    pub fn alpha_sigma(&self, t: f64) -> Result<(f64, f64)> {
        check_time(t)?;
        let la = self.log_alpha_unchecked(t);
        // sigma = sqrt(1 - exp(2 la)) without cancellation near t = 0.
        Ok((la.exp(), (-(2.0 * la).exp_m1()).max(0.0).sqrt()))
    }

    /// `sigma_t / alpha_t`, the quantity DDIM steps are linear in.
    pub fn noise_to_signal(&self, t: f64) -> Result<f64> {
        let (alpha, sigma) = self.alpha_sigma(t)?;
        Ok(sigma / alpha)
    }

    /// `d(sigma_t / alpha_t) / dt`.
    ///
    /// With `alpha^2 + sigma^2 = 1` this simplifies to
    /// `-(d log alpha / dt) / (sigma alpha)`, which diverges as `t -> 0`; the
    /// derivative is therefore only defined on `(0, 1]`.
    pub fn ratio_derivative(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        if t == 0.0 {
            return Err(Error::Domain(
                "d(sigma/alpha)/dt is unbounded at t = 0 for variance-preserving schedules".into(),
            ));
        }
        let (alpha, sigma) = self.alpha_sigma(t)?;
        Ok(-self.dlog_alpha_unchecked(t) / (sigma * alpha))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanKind {
    UniformRandom,
    LinearAnneal,
    SqrtAnneal,
}

/// Maps optimization time `tau` in `[0, iterations]` to diffusion time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimestepPlan {
    pub kind: PlanKind,
    /// `tau_end`, the total number of optimization iterations.
    pub iterations: usize,
    pub t_start: f64,
    pub t_end: f64,
}

impl TimestepPlan {
    pub fn new(kind: PlanKind, iterations: usize, t_start: f64, t_end: f64) -> Result<Self> {
        let plan = Self {
            kind,
            iterations,
            t_start,
            t_end,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn linear(iterations: usize) -> Self {
        Self {
            kind: PlanKind::LinearAnneal,
            iterations,
            t_start: 0.98,
            t_end: 0.02,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("timestep plan needs at least one iteration".into()));
        }
        let in_range = |t: f64| t > 0.0 && t <= 1.0;
        if !(in_range(self.t_start) && in_range(self.t_end) && self.t_start > self.t_end) {
            return Err(Error::Config(format!(
                "timestep plan needs 1 >= t_start > t_end > 0, got t_start={}, t_end={}",
                self.t_start, self.t_end
            )));
        }
        Ok(())
    }

    pub fn is_annealed(&self) -> bool {
        self.kind != PlanKind::UniformRandom
    }

    /// Diffusion time for optimization step `tau`.
    ///
    /// Only the uniform-random plan touches `rng`.
    pub fn anneal_t(&self, tau: usize, rng: &mut Stream) -> Result<f64> {
        if tau > self.iterations {
            return Err(Error::Domain(format!(
                "tau = {tau} exceeds tau_end = {}",
                self.iterations
            )));
        }
        let frac = tau as f64 / self.iterations as f64;
        let span = self.t_end - self.t_start;
        Ok(match self.kind {
            PlanKind::LinearAnneal => {
                if tau == self.iterations {
                    self.t_end
                } else {
                    self.t_start + span * frac
                }
            }
            PlanKind::SqrtAnneal => {
                if tau == self.iterations {
                    self.t_end
                } else {
                    self.t_start + span * frac.sqrt()
                }
            }
            PlanKind::UniformRandom => rng.uniform_range(self.t_end, self.t_start),
        })
    }
}
