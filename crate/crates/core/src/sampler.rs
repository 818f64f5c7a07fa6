//! Deterministic DDIM sampling as the first-order discretization of the
//! probability-flow ODE `d(x/alpha)/dt = d(sigma/alpha)/dt * eps(x, t)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::oracle::{guided_epsilon, GuidanceSpec, MixtureOracle};
use crate::schedule::NoiseSchedule;
use crate::vecops::lincomb;

/// One logged point of a generation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub t: f64,
    /// Noisy iterate `x_t`.
    pub x: Vec<f64>,
    /// Clean image `(x_t - sigma_t eps~) / alpha_t`.
    pub clean: Vec<f64>,
    /// One-step estimate `(x_t - sigma_t eps_hat) / alpha_t`.
    pub estimate: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub initial_noise: Vec<f64>,
    pub records: Vec<TrajectoryRecord>,
}

impl Trajectory {
    /// The generated sample: the final one-step estimate.
    pub fn sample(&self) -> &[f64] {
        &self.records.last().expect("trajectory is never empty").estimate
    }

    /// The last noisy iterate `x_{t_end}`.
    pub fn final_iterate(&self) -> &[f64] {
        &self.records.last().expect("trajectory is never empty").x
    }
}

/// Uniform step grid from `t_start` down to `t_end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepGrid {
    pub steps: usize,
    pub t_start: f64,
    pub t_end: f64,
}

impl StepGrid {
    pub fn new(steps: usize, t_start: f64, t_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("sampler needs at least one step".into()));
        }
        if !(t_start <= 1.0 && t_end > 0.0 && t_start > t_end) {
            return Err(Error::Config(format!(
                "step grid needs 1 >= t_start > t_end > 0, got ({t_start}, {t_end})"
            )));
        }
        Ok(Self {
            steps,
            t_start,
            t_end,
        })
    }

    /// Same expression as the linear annealing plan so the two grids agree bitwise.
    pub fn time(&self, k: usize) -> f64 {
        if k >= self.steps {
            self.t_end
        } else {
            self.t_start + (self.t_end - self.t_start) * (k as f64 / self.steps as f64)
        }
    }
}

pub fn pf_ode_rhs(
    x: &[f64],
    t: f64,
    oracle: &MixtureOracle,
    guidance: &GuidanceSpec,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let dratio = schedule.ratio_derivative(t)?;
    let eps = guided_epsilon(oracle, x, t, schedule, guidance)?;
    Ok(eps.into_iter().map(|e| dratio * e).collect())
}

/// DDIM update from time `s` to an earlier time `t`.
///
/// `t == s` is a zero-length step and returns `x_s` unchanged.
pub fn ddim_step(
    x_s: &[f64],
    s: f64,
    t: f64,
    oracle: &MixtureOracle,
    guidance: &GuidanceSpec,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if t > s {
        return Err(Error::Ordering(format!("reverse step needs t <= s, got t={t}, s={s}")));
    }
    if t <= 0.0 {
        return Err(Error::Domain(format!("reverse step target t={t} must be > 0")));
    }
    if t == s {
        return Ok(x_s.to_vec());
    }
    let eps = guided_epsilon(oracle, x_s, s, schedule, guidance)?;
    ddim_update(x_s, &eps, s, t, schedule)
}

fn ddim_update(
    x_s: &[f64],
    eps: &[f64],
    s: f64,
    t: f64,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let (a_s, sg_s) = schedule.alpha_sigma(s)?;
    let (a_t, sg_t) = schedule.alpha_sigma(t)?;
    Ok(x_s
        .iter()
        .zip(eps)
        .map(|(x, e)| a_t * (x - sg_s * e) / a_s + sg_t * e)
        .collect())
}

fn record(
    step: usize,
    t: f64,
    x: Vec<f64>,
    eps: &[f64],
    initial_noise: &[f64],
    schedule: &NoiseSchedule,
) -> Result<TrajectoryRecord> {
    let (a, s) = schedule.alpha_sigma(t)?;
    let clean = lincomb(1.0 / a, &x, -s / a, initial_noise);
    let estimate = lincomb(1.0 / a, &x, -s / a, eps);
    Ok(TrajectoryRecord {
        step,
        t,
        x,
        clean,
        estimate,
    })
}

/// Runs DDIM from `x_{t_start} = initial_noise` over `grid`, logging
/// `grid.steps + 1` records (one per grid time).
pub fn ddim_trajectory(
    initial_noise: &[f64],
    grid: &StepGrid,
    oracle: &MixtureOracle,
    guidance: &GuidanceSpec,
    schedule: &NoiseSchedule,
) -> Result<Trajectory> {
    Error::check_dim(oracle.dim(), initial_noise.len())?;
    guidance.validate(oracle)?;
    let mut records = Vec::with_capacity(grid.steps + 1);
    let mut x = initial_noise.to_vec();
    for k in 0..=grid.steps {
        let s = grid.time(k);
        let eps = guided_epsilon(oracle, &x, s, schedule, guidance)?;
        let next = if k < grid.steps {
            Some(ddim_update(&x, &eps, s, grid.time(k + 1), schedule)?)
        } else {
            None
        };
        records.push(record(k, s, x, &eps, initial_noise, schedule)?);
        match next {
            Some(n) => x = n,
            None => break,
        }
    }
    Ok(Trajectory {
        initial_noise: initial_noise.to_vec(),
        records,
    })
}

/// Closed-form PF-ODE flow for a single Gaussian `N(mu, s0^2 I)`:
/// `(x_t - alpha_t mu) / sqrt(alpha_t^2 s0^2 + sigma_t^2)` is conserved.
pub fn gaussian_flow(
    x_from: &[f64],
    from: f64,
    to: f64,
    mean: &[f64],
    stddev: f64,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let (a0, s0) = schedule.alpha_sigma(from)?;
    let (a1, s1) = schedule.alpha_sigma(to)?;
    let std0 = (a0 * a0 * stddev * stddev + s0 * s0).sqrt();
    let std1 = (a1 * a1 * stddev * stddev + s1 * s1).sqrt();
    Ok(x_from
        .iter()
        .zip(mean)
        .map(|(x, m)| a1 * m + std1 * (x - a0 * m) / std0)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{Component, UNCONDITIONAL};

    fn sched() -> NoiseSchedule {
        NoiseSchedule::default()
    }

    fn point_mass(mu: Vec<f64>) -> MixtureOracle {
        MixtureOracle::unconditional(vec![Component::new(1.0, mu, 0.0)]).unwrap()
    }

    #[test]
    fn zero_length_step_is_identity() {
        let o = point_mass(vec![1.0]);
        let g = GuidanceSpec::default();
        assert_eq!(ddim_step(&[0.3], 0.5, 0.5, &o, &g, &sched()).unwrap(), vec![0.3]);
        assert!(matches!(
            ddim_step(&[0.3], 0.4, 0.5, &o, &g, &sched()),
            Err(Error::Ordering(_))
        ));
    }

    #[test]
    fn point_mass_step_closed_form() {
        let mu = vec![0.4, -0.9];
        let o = point_mass(mu.clone());
        let g = GuidanceSpec::default();
        let (s, t) = (0.7, 0.3);
        let x = vec![1.1, 0.2];
        let got = ddim_step(&x, s, t, &o, &g, &sched()).unwrap();
        let (a_s, sg_s) = sched().alpha_sigma(s).unwrap();
        let (a_t, sg_t) = sched().alpha_sigma(t).unwrap();
        for i in 0..2 {
            let want = a_t * mu[i] + sg_t * (x[i] - a_s * mu[i]) / sg_s;
            assert!((got[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_rhs_vanishes() {
        let o = MixtureOracle::unconditional(vec![
            Component::new(0.5, vec![2.0], 0.1),
            Component::new(0.5, vec![-2.0], 0.1),
        ])
        .unwrap();
        let r = pf_ode_rhs(&[0.0], 0.5, &o, &GuidanceSpec::default(), &sched()).unwrap();
        assert_eq!(r, vec![0.0]);
    }

    #[test]
    fn point_mass_rhs_is_substitution() {
        let o = point_mass(vec![0.5]);
        let t = 0.6;
        let (a, s) = sched().alpha_sigma(t).unwrap();
        let r = pf_ode_rhs(&[1.0], t, &o, &GuidanceSpec::default(), &sched()).unwrap();
        let want = sched().ratio_derivative(t).unwrap() * (1.0 - a * 0.5) / s;
        assert!((r[0] - want).abs() < 1e-12 * want.abs());
    }

    #[test]
    fn point_mass_trajectory_lands_on_mean() {
        let mu = vec![0.25, -1.5, 3.0];
        let o = point_mass(mu.clone());
        let grid = StepGrid::new(20, 0.98, 0.02).unwrap();
        let traj =
            ddim_trajectory(&[0.1, 0.9, -0.4], &grid, &o, &GuidanceSpec::default(), &sched())
                .unwrap();
        assert_eq!(traj.records.len(), 21);
        for r in &traj.records {
            for i in 0..3 {
                assert!((r.estimate[i] - mu[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn change_of_variable_holds_on_every_record() {
        let o = MixtureOracle::unconditional(vec![
            Component::new(0.2, vec![1.0, 1.0], 0.2),
            Component::new(0.8, vec![-1.0, 0.5], 0.3),
        ])
        .unwrap();
        let eps = vec![0.3, -1.2];
        let grid = StepGrid::new(30, 0.98, 0.02).unwrap();
        let traj = ddim_trajectory(&eps, &grid, &o, &GuidanceSpec::none(UNCONDITIONAL), &sched())
            .unwrap();
        assert_eq!(traj.records[0].t, 0.98);
        for r in &traj.records {
            let (a, s) = sched().alpha_sigma(r.t).unwrap();
            for i in 0..2 {
                assert!((a * r.clean[i] + s * eps[i] - r.x[i]).abs() < 1e-9);
            }
        }
    }
}
