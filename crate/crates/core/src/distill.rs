//! Score distillation engines: SDS and FSD on image parameters (2D) and on a
//! rendered voxel scene (3D), plus the Adam optimizer they share.
//!
//! Both methods form `x_t = alpha_t g + sigma_t eps` and push the parameters
//! along `-(eps_hat(x_t) - eps)`. They differ only in where `t` and `eps`
//! come from: SDS draws fresh noise and a random `t` each iteration, FSD keeps
//! the noise fixed (per view, in 3D) and anneals `t` monotonically.

use serde::{Deserialize, Serialize};

use crate::camera::{Camera, CameraSampler};
use crate::error::{Error, Result};
use crate::noise_field::{NoiseField, QueryMask};
use crate::oracle::{guided_epsilon, noise_reference, GuidanceSpec, MixtureOracle};
use crate::rng::{Stream, StreamId};
use crate::scene::{render, render_vjp, RenderOptions, VoxelScene};
use crate::schedule::{NoiseSchedule, PlanKind, TimestepPlan};
use crate::vecops::{dist, norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Sds,
    Fsd,
    /// FSD with the first-order Euler update in place of an optimizer.
    FsdEuler,
}

impl Method {
    pub fn uses_fixed_noise(self) -> bool {
        !matches!(self, Method::Sds)
    }
}

/// Per-timestep residual weighting `w_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    ConstantOne,
    SigmaOverAlpha,
}

impl Weighting {
    fn weight(self, alpha: f64, sigma: f64) -> f64 {
        match self {
            Weighting::ConstantOne => 1.0,
            Weighting::SigmaOverAlpha => sigma / alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    PlainGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub method: Method,
    pub plan: TimestepPlan,
    #[serde(default)]
    pub guidance: GuidanceSpec,
    pub weighting: Weighting,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub adam: AdamHyper,
    /// Elementwise bound on the residual; larger entries are clipped with a warning.
    #[serde(default = "default_clamp")]
    pub residual_clamp: f64,
}

fn default_clamp() -> f64 {
    1e3
}

impl DistillConfig {
    /// FSD defaults: linear annealing, eta = 3e-3, constant weighting.
    pub fn fsd(iterations: usize) -> Self {
        Self {
            method: Method::Fsd,
            plan: TimestepPlan::linear(iterations),
            guidance: GuidanceSpec::default(),
            weighting: Weighting::ConstantOne,
            learning_rate: 3e-3,
            optimizer: OptimizerKind::Adam,
            adam: AdamHyper::default(),
            residual_clamp: default_clamp(),
        }
    }

    /// SDS defaults: uniform-random t on [0.02, 0.98], eta = 2e-2, sigma/alpha weighting.
    pub fn sds(iterations: usize) -> Self {
        Self {
            method: Method::Sds,
            plan: TimestepPlan {
                kind: PlanKind::UniformRandom,
                ..TimestepPlan::linear(iterations)
            },
            weighting: Weighting::SigmaOverAlpha,
            learning_rate: 2e-2,
            ..Self::fsd(iterations)
        }
    }

    /// First-order Euler FSD on a linear plan (no optimizer state).
    pub fn fsd_euler(iterations: usize) -> Self {
        Self {
            method: Method::FsdEuler,
            optimizer: OptimizerKind::PlainGradient,
            ..Self::fsd(iterations)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        if self.method.uses_fixed_noise() && !self.plan.is_annealed() {
            return Err(Error::Config(format!(
                "{:?} needs an annealed timestep plan, got uniform-random",
                self.method
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.residual_clamp.is_nan() || self.residual_clamp <= 0.0 {
            return Err(Error::Config("residual clamp must be positive".into()));
        }
        let h = &self.adam;
        if !((0.0..1.0).contains(&h.beta1) && (0.0..1.0).contains(&h.beta2) && h.eps > 0.0) {
            return Err(Error::Config(format!("invalid adam hyperparameters {h:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Advances the moments with `grad` and returns the bias-corrected
    /// parameter increment `-lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, grad: &[f64], lr: f64, hyper: &AdamHyper) -> Result<Vec<f64>> {
        Error::check_dim(self.m.len(), grad.len())?;
        self.step += 1;
        let bc1 = 1.0 - hyper.beta1.powi(self.step as i32);
        let bc2 = 1.0 - hyper.beta2.powi(self.step as i32);
        Ok(self
            .m
            .iter_mut()
            .zip(self.v.iter_mut())
            .zip(grad)
            .map(|((m, v), &g)| {
                *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
                *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                -lr * m_hat / (v_hat.sqrt() + hyper.eps)
            })
            .collect())
    }
}

enum Optimizer {
    Adam(AdamState, AdamHyper),
    Plain,
}

impl Optimizer {
    fn from_config(config: &DistillConfig, dim: usize) -> Self {
        match config.optimizer {
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(dim), config.adam),
            OptimizerKind::PlainGradient => Optimizer::Plain,
        }
    }

    fn increment(&mut self, grad: &[f64], lr: f64) -> Result<Vec<f64>> {
        match self {
            Optimizer::Adam(state, hyper) => state.step(grad, lr, hyper),
            Optimizer::Plain => Ok(grad.iter().map(|g| -lr * g).collect()),
        }
    }
}

fn clamp_residual(residual: &mut [f64], bound: f64) {
    let mut clipped = 0usize;
    for r in residual.iter_mut() {
        if r.abs() > bound {
            *r = r.signum() * bound;
            clipped += 1;
        }
    }
    if clipped > 0 {
        log::warn!("clipped {clipped} residual entries to |r| <= {bound}");
    }
}

/// Guided prediction at `x_t = alpha theta + sigma noise` together with the
/// residual `eps_hat - reference`.
struct ResidualEval {
    x_t: Vec<f64>,
    eps_hat: Vec<f64>,
    residual: Vec<f64>,
}

fn evaluate_residual(
    theta: &[f64],
    noise: &[f64],
    t: f64,
    oracle: &MixtureOracle,
    guidance: &GuidanceSpec,
    schedule: &NoiseSchedule,
) -> Result<ResidualEval> {
    Error::check_dim(oracle.dim(), theta.len())?;
    Error::check_dim(theta.len(), noise.len())?;
    let (alpha, sigma) = schedule.alpha_sigma(t)?;
    let x_t: Vec<f64> = theta
        .iter()
        .zip(noise)
        .map(|(th, e)| alpha * th + sigma * e)
        .collect();
    let eps_hat = guided_epsilon(oracle, &x_t, t, schedule, guidance)?;
    let reference = noise_reference(oracle, &x_t, t, schedule, guidance, noise)?;
    let residual = eps_hat.iter().zip(&reference).map(|(a, b)| a - b).collect();
    Ok(ResidualEval {
        x_t,
        eps_hat,
        residual,
    })
}

/// The image-space distillation gradient `eps_hat(alpha theta + sigma eps) - eps`
/// (with cfg this is `c (eps_y - eps_0) + (eps_0 - eps)`; with nfsd-style
/// guidance the subtracted term is `eps_{y_neg}`).
pub fn sds_residual_2d(
    theta: &[f64],
    noise: &[f64],
    t: f64,
    oracle: &MixtureOracle,
    guidance: &GuidanceSpec,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    Ok(evaluate_residual(theta, noise, t, oracle, guidance, schedule)?.residual)
}

/// First-order FSD update of the clean image from time `s` to `t < s`:
/// `x_c + (sigma_t/alpha_t - sigma_s/alpha_s) (eps_hat - eps~)`.
pub fn fsd_euler_step_2d(
    clean: &[f64],
    initial_noise: &[f64],
    s: f64,
    t: f64,
    oracle: &MixtureOracle,
    guidance: &GuidanceSpec,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if t > s {
        return Err(Error::Ordering(format!("euler step needs t <= s, got t={t}, s={s}")));
    }
    if t == s {
        return Ok(clean.to_vec());
    }
    let d_ratio = schedule.noise_to_signal(t)? - schedule.noise_to_signal(s)?;
    let (alpha, sigma) = schedule.alpha_sigma(s)?;
    let x_s: Vec<f64> = clean
        .iter()
        .zip(initial_noise)
        .map(|(c, e)| alpha * c + sigma * e)
        .collect();
    let eps_hat = guided_epsilon(oracle, &x_s, s, schedule, guidance)?;
    Ok(clean
        .iter()
        .zip(eps_hat.iter().zip(initial_noise))
        .map(|(c, (e, n))| c + d_ratio * (e - n))
        .collect())
}

/// Clean image whose noisy version at `t` is exactly `noise` (so a distillation
/// run starts from the same state as DDIM started at `x_t = noise`).
pub fn clean_from_initial_noise(
    noise: &[f64],
    t: f64,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let (alpha, sigma) = schedule.alpha_sigma(t)?;
    Ok(noise.iter().map(|e| (1.0 - sigma) * e / alpha).collect())
}

/// Where the added noise comes from in a 2D run.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSource {
    /// One draw `eps~` reused at every iteration (FSD).
    Fixed(Vec<f64>),
    /// A fresh standard-normal draw per iteration (SDS).
    Fresh,
}

impl NoiseSource {
    /// The source a method calls for, with any fixed draw taken from the
    /// run seed's initial-noise stream.
    pub fn for_method(method: Method, dim: usize, seed: u64) -> Self {
        if method.uses_fixed_noise() {
            NoiseSource::Fixed(Stream::new(seed, StreamId::InitialNoise).normal_vec(dim))
        } else {
            NoiseSource::Fresh
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistillRecord {
    pub tau: usize,
    pub t: f64,
    /// `1/2 (alpha/sigma) ||theta - x_gt||^2`.
    pub loss_proxy: f64,
    pub residual_norm: f64,
    pub theta_norm: f64,
    pub theta: Vec<f64>,
    pub estimate: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillOutcome {
    pub theta: Vec<f64>,
    pub log: Vec<DistillRecord>,
}

/// Image-as-parameter distillation: `theta` is the image itself.
///
/// Each record holds the state *before* the update at iteration `tau`.
pub fn run_distill_2d(
    theta0: &[f64],
    config: &DistillConfig,
    noise: &NoiseSource,
    oracle: &MixtureOracle,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<DistillOutcome> {
    config.validate()?;
    config.guidance.validate(oracle)?;
    Error::check_dim(oracle.dim(), theta0.len())?;
    match (config.method.uses_fixed_noise(), noise) {
        (true, NoiseSource::Fresh) => {
            return Err(Error::Config(format!(
                "{:?} requires a fixed noise source",
                config.method
            )))
        }
        (false, NoiseSource::Fixed(_)) => {
            return Err(Error::Config("sds requires fresh noise per iteration".into()))
        }
        (_, NoiseSource::Fixed(e)) => Error::check_dim(theta0.len(), e.len())?,
        _ => {}
    }

    let dim = theta0.len();
    let mut t_rng = Stream::new(seed, StreamId::Timesteps);
    let mut noise_rng = Stream::new(seed, StreamId::FreshNoise);
    let mut optimizer = Optimizer::from_config(config, dim);
    let mut theta = theta0.to_vec();
    let iterations = config.plan.iterations;
    let mut log = Vec::with_capacity(iterations);

    for tau in 0..iterations {
        let t = config.plan.anneal_t(tau, &mut t_rng)?;
        let fresh;
        let eps: &[f64] = match noise {
            NoiseSource::Fixed(e) => e,
            NoiseSource::Fresh => {
                fresh = noise_rng.normal_vec(dim);
                &fresh
            }
        };
        let (alpha, sigma) = schedule.alpha_sigma(t)?;
        let eval = evaluate_residual(&theta, eps, t, oracle, &config.guidance, schedule)?;
        let estimate: Vec<f64> = eval
            .x_t
            .iter()
            .zip(&eval.eps_hat)
            .map(|(x, e)| (x - sigma * e) / alpha)
            .collect();
        let mut residual = eval.residual;
        log.push(DistillRecord {
            tau,
            t,
            loss_proxy: 0.5 * alpha / sigma * dist(&theta, &estimate).powi(2),
            residual_norm: norm(&residual),
            theta_norm: norm(&theta),
            theta: theta.clone(),
            estimate,
        });

        match config.method {
            Method::FsdEuler => {
                let t_next = config.plan.anneal_t(tau + 1, &mut t_rng)?;
                let d_ratio = schedule.noise_to_signal(t_next)? - sigma / alpha;
                for (th, r) in theta.iter_mut().zip(&residual) {
                    *th += d_ratio * r;
                }
            }
            Method::Sds | Method::Fsd => {
                let w = config.weighting.weight(alpha, sigma);
                residual.iter_mut().for_each(|r| *r *= w);
                clamp_residual(&mut residual, config.residual_clamp);
                let delta = optimizer.increment(&residual, config.learning_rate)?;
                theta.iter_mut().zip(&delta).for_each(|(th, d)| *th += d);
            }
        }
    }
    Ok(DistillOutcome { theta, log })
}

/// Per-view noise for 3D distillation.
#[derive(Debug, Clone)]
pub enum ViewNoise {
    /// A deterministic (or partly deterministic) function of the camera.
    Field(NoiseField),
    /// Fresh i.i.d. noise at every query (SDS).
    Iid,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneRecord {
    pub tau: usize,
    pub t: f64,
    pub loss_proxy: f64,
    pub residual_norm: f64,
    pub theta_norm: f64,
}

#[derive(Debug, Clone)]
pub struct SceneOutcome {
    pub scene: VoxelScene,
    pub log: Vec<SceneRecord>,
}

/// Distillation through the voxel renderer, one sampled camera per iteration.
///
/// Per iteration: sample a camera, render image and opacity, build the
/// foreground mask, query the view noise, form `x_t`, take the residual
/// `eps_hat - eps(c)` and pull it back through the renderer.
#[allow(clippy::too_many_arguments)]
pub fn run_distill_3d(
    scene0: &VoxelScene,
    config: &DistillConfig,
    noise: &ViewNoise,
    cameras: &CameraSampler,
    render_opts: &RenderOptions,
    oracle: &MixtureOracle,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<SceneOutcome> {
    config.validate()?;
    config.guidance.validate(oracle)?;
    render_opts.validate()?;
    if config.method == Method::FsdEuler {
        return Err(Error::Config(
            "the Euler variant applies to image parameters only; use fsd or sds in 3D".into(),
        ));
    }
    let image_len = render_opts.image_len();
    if oracle.dim() != image_len {
        return Err(Error::Config(format!(
            "oracle dimension {} does not match rendered image size {image_len}",
            oracle.dim()
        )));
    }
    match (config.method.uses_fixed_noise(), noise) {
        (true, ViewNoise::Iid) => {
            return Err(Error::Config(
                "fsd requires a deterministic view-noise function".into(),
            ))
        }
        (_, ViewNoise::Field(f)) => {
            if f.len() != image_len {
                return Err(Error::Config(format!(
                    "noise field produces {} values per view, renderer produces {image_len}",
                    f.len()
                )));
            }
            f.check_patch(render_opts.height, render_opts.width)?;
        }
        _ => {}
    }

    let mut t_rng = Stream::new(seed, StreamId::Timesteps);
    let mut cam_rng = Stream::new(seed, StreamId::Cameras);
    let mut noise_rng = Stream::new(seed, StreamId::FreshNoise);
    let mut scene = scene0.clone();
    let mut optimizer = Optimizer::from_config(config, scene.param_len());
    let iterations = config.plan.iterations;
    let mut log = Vec::with_capacity(iterations);

    for tau in 0..iterations {
        let camera: Camera = cameras.sample(&mut cam_rng);
        let out = render(&scene, &camera, render_opts)?;
        let mask = QueryMask::from_opacity(&out.opacity, render_opts.alpha_threshold);
        let eps = match noise {
            ViewNoise::Field(field) => field.query(&camera, &mask, &mut noise_rng)?,
            ViewNoise::Iid => noise_rng.normal_vec(image_len),
        };
        let t = config.plan.anneal_t(tau, &mut t_rng)?;
        let (alpha, sigma) = schedule.alpha_sigma(t)?;
        let eval = evaluate_residual(&out.image, &eps, t, oracle, &config.guidance, schedule)?;
        let estimate_gap: f64 = out
            .image
            .iter()
            .zip(eval.x_t.iter().zip(&eval.eps_hat))
            .map(|(g, (x, e))| {
                let d = g - (x - sigma * e) / alpha;
                d * d
            })
            .sum();
        let mut residual = eval.residual;
        let w = config.weighting.weight(alpha, sigma);
        residual.iter_mut().for_each(|r| *r *= w);
        clamp_residual(&mut residual, config.residual_clamp);
        log.push(SceneRecord {
            tau,
            t,
            loss_proxy: 0.5 * alpha / sigma * estimate_gap,
            residual_norm: norm(&residual),
            theta_norm: norm(scene.params()),
        });
        let grad = render_vjp(&scene, &camera, render_opts, &residual)?;
        let delta = optimizer.increment(&grad, config.learning_rate)?;
        scene.apply_increment(&delta);
    }
    Ok(SceneOutcome { scene, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{Component, UNCONDITIONAL};
    use std::collections::BTreeMap;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::default()
    }

    #[test]
    fn adam_zero_gradient_gives_zero_step() {
        let mut s = AdamState::new(3);
        let d = s.step(&[0.0; 3], 0.01, &AdamHyper::default()).unwrap();
        assert_eq!(d, vec![0.0; 3]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn adam_first_step_by_hand() {
        let mut s = AdamState::new(1);
        let d = s.step(&[2.0], 0.01, &AdamHyper::default()).unwrap();
        // m_hat = 2, v_hat = 4
        assert!((d[0] - (-0.01 * 2.0 / (2.0 + 1e-8))).abs() < 1e-15);
        assert!((d[0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn adam_first_step_is_scale_invariant() {
        let h = AdamHyper::default();
        let a = AdamState::new(1).step(&[0.37], 0.01, &h).unwrap()[0];
        let b = AdamState::new(1).step(&[370.0], 0.01, &h).unwrap()[0];
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn point_mass_residual_closed_form() {
        let mu = vec![0.5, -0.2];
        let o = MixtureOracle::unconditional(vec![Component::new(1.0, mu.clone(), 0.0)]).unwrap();
        let theta = vec![1.0, 0.3];
        let eps = vec![0.4, -0.7];
        let t = 0.45;
        let r = sds_residual_2d(&theta, &eps, t, &o, &GuidanceSpec::default(), &sched()).unwrap();
        let (a, s) = sched().alpha_sigma(t).unwrap();
        for i in 0..2 {
            let want = a * (theta[i] - mu[i]) / s;
            assert!((r[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_vanishes_at_fixed_point() {
        let mu = vec![0.5];
        let o = MixtureOracle::unconditional(vec![Component::new(1.0, mu.clone(), 0.0)]).unwrap();
        let r = sds_residual_2d(&mu, &[0.9], 0.3, &o, &GuidanceSpec::default(), &sched()).unwrap();
        assert!(r[0].abs() < 1e-12);
    }

    #[test]
    fn symmetric_residual_at_origin() {
        let o = MixtureOracle::unconditional(vec![
            Component::new(0.5, vec![2.0], 0.1),
            Component::new(0.5, vec![-2.0], 0.1),
        ])
        .unwrap();
        let r = sds_residual_2d(&[0.0], &[0.0], 0.5, &o, &GuidanceSpec::default(), &sched())
            .unwrap();
        assert_eq!(r, vec![0.0]);
    }

    #[test]
    fn cfg_residual_matches_explicit_form() {
        let mut sets = BTreeMap::new();
        sets.insert("y".to_string(), vec![0]);
        let o = MixtureOracle::new(
            vec![
                Component::new(0.4, vec![1.0, 0.0], 0.3),
                Component::new(0.6, vec![-1.0, 0.5], 0.2),
            ],
            sets,
        )
        .unwrap();
        let theta = [0.2, -0.1];
        let eps = [0.5, 1.1];
        let t = 0.5;
        let c = 7.5;
        let r = sds_residual_2d(&theta, &eps, t, &o, &GuidanceSpec::cfg("y", c), &sched())
            .unwrap();
        let (a, s) = sched().alpha_sigma(t).unwrap();
        let x = [a * theta[0] + s * eps[0], a * theta[1] + s * eps[1]];
        let ey = o.epsilon_pred(&x, t, &sched(), "y").unwrap();
        let eu = o.epsilon_pred(&x, t, &sched(), UNCONDITIONAL).unwrap();
        for i in 0..2 {
            let want = c * (ey[i] - eu[i]) + (eu[i] - eps[i]);
            assert!((r[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn euler_step_without_residual_is_stationary() {
        // Point mass at mu with theta = mu predicts exactly the added noise.
        let mu = vec![0.3, 0.1];
        let o = MixtureOracle::unconditional(vec![Component::new(1.0, mu.clone(), 0.0)]).unwrap();
        let out =
            fsd_euler_step_2d(&mu, &[0.2, -0.4], 0.6, 0.5, &o, &GuidanceSpec::default(), &sched())
                .unwrap();
        for i in 0..2 {
            assert!((out[i] - mu[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn fsd_rejects_uniform_plan() {
        let mut cfg = DistillConfig::fsd(10);
        cfg.plan.kind = PlanKind::UniformRandom;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn noise_source_must_match_method() {
        let o = MixtureOracle::unconditional(vec![Component::new(1.0, vec![0.0], 0.1)]).unwrap();
        let err = run_distill_2d(
            &[0.0],
            &DistillConfig::fsd(5),
            &NoiseSource::Fresh,
            &o,
            &sched(),
            0,
        );
        assert!(matches!(err, Err(Error::Config(_))));
        let err = run_distill_2d(
            &[0.0],
            &DistillConfig::sds(5),
            &NoiseSource::Fixed(vec![0.1]),
            &o,
            &sched(),
            0,
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn large_residuals_are_clamped() {
        let mut r = vec![5e3, -2.0, -4e4];
        clamp_residual(&mut r, 1e3);
        assert_eq!(r, vec![1e3, -2.0, -1e3]);
    }
}
