//! Python bindings: schedules, mixture oracles, DDIM, 2D distillation,
//! world-map noise, the voxel renderer and the experiment runner.

use std::collections::BTreeMap;
use std::path::Path;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use flowdistill::camera::Camera as CoreCamera;
use flowdistill::config::RunConfig;
use flowdistill::distill::{
    clean_from_initial_noise, run_distill_2d, DistillConfig, Method, NoiseSource,
};
use flowdistill::ensemble::ensemble_diversity as core_ensemble;
use flowdistill::experiment::run_experiment as core_run;
use flowdistill::noise_field::{r_plus as core_r_plus, QueryMask, WorldMapNoise as CoreWorldMap};
use flowdistill::oracle::{Component, GuidanceSpec, MixtureOracle as CoreOracle};
use flowdistill::rng::{Stream, StreamId};
use flowdistill::sampler::{ddim_trajectory, StepGrid};
use flowdistill::scene::{render as core_render, RenderOptions, VoxelScene as CoreScene};
use flowdistill::schedule::NoiseSchedule as CoreSchedule;
use flowdistill::Error;

fn to_py(e: Error) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

#[pyclass(name = "NoiseSchedule", frozen)]
struct NoiseSchedule(CoreSchedule);

#[pymethods]
impl NoiseSchedule {
    /// Linear-beta VP schedule (defaults 0.1, 20).
    #[new]
    #[pyo3(signature = (beta_min=0.1, beta_max=20.0))]
    fn new(beta_min: f64, beta_max: f64) -> PyResult<Self> {
        let s = CoreSchedule::VariancePreservingLinearBeta { beta_min, beta_max };
        s.validate().map_err(to_py)?;
        Ok(Self(s))
    }

    #[staticmethod]
    #[pyo3(signature = (offset=0.008))]
    fn cosine(offset: f64) -> PyResult<Self> {
        let s = CoreSchedule::VariancePreservingCosine { offset };
        s.validate().map_err(to_py)?;
        Ok(Self(s))
    }

    fn alpha_sigma(&self, t: f64) -> PyResult<(f64, f64)> {
        self.0.alpha_sigma(t).map_err(to_py)
    }

    fn noise_to_signal(&self, t: f64) -> PyResult<f64> {
        self.0.noise_to_signal(t).map_err(to_py)
    }

    fn ratio_derivative(&self, t: f64) -> PyResult<f64> {
        self.0.ratio_derivative(t).map_err(to_py)
    }
}

fn schedule_or_default(s: Option<&NoiseSchedule>) -> CoreSchedule {
    s.map(|s| s.0).unwrap_or_default()
}

#[pyclass(name = "MixtureOracle", frozen)]
struct MixtureOracle(CoreOracle);

#[pymethods]
impl MixtureOracle {
    /// `components` is a list of `(weight, mean, stddev)`.
    #[new]
    #[pyo3(signature = (components, condition_sets=None))]
    fn new(
        components: Vec<(f64, Vec<f64>, f64)>,
        condition_sets: Option<BTreeMap<String, Vec<usize>>>,
    ) -> PyResult<Self> {
        let comps = components
            .into_iter()
            .map(|(w, m, s)| Component::new(w, m, s))
            .collect();
        CoreOracle::new(comps, condition_sets.unwrap_or_default())
            .map(Self)
            .map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[pyo3(signature = (x, t, schedule=None, condition="∅"))]
    fn epsilon_pred(
        &self,
        x: Vec<f64>,
        t: f64,
        schedule: Option<&NoiseSchedule>,
        condition: &str,
    ) -> PyResult<Vec<f64>> {
        self.0
            .epsilon_pred(&x, t, &schedule_or_default(schedule), condition)
            .map_err(to_py)
    }

    #[pyo3(signature = (x, t, schedule=None, condition="∅"))]
    fn posterior_mean(
        &self,
        x: Vec<f64>,
        t: f64,
        schedule: Option<&NoiseSchedule>,
        condition: &str,
    ) -> PyResult<Vec<f64>> {
        self.0
            .posterior_mean(&x, t, &schedule_or_default(schedule), condition)
            .map_err(to_py)
    }

    #[pyo3(signature = (x, t, schedule=None, condition="∅"))]
    fn log_density(
        &self,
        x: Vec<f64>,
        t: f64,
        schedule: Option<&NoiseSchedule>,
        condition: &str,
    ) -> PyResult<f64> {
        self.0
            .log_density(&x, t, &schedule_or_default(schedule), condition)
            .map_err(to_py)
    }

    fn nearest_component(&self, x: Vec<f64>) -> usize {
        self.0.nearest_component(&x)
    }
}

/// Deterministic DDIM from `x_{t_start} = noise`; returns
/// `(sample, final_iterate)`.
#[pyfunction]
#[pyo3(signature = (oracle, noise, steps=50, t_start=0.98, t_end=0.02, schedule=None, guidance_scale=None, condition="∅"))]
#[allow(clippy::too_many_arguments)]
fn ddim_sample(
    oracle: &MixtureOracle,
    noise: Vec<f64>,
    steps: usize,
    t_start: f64,
    t_end: f64,
    schedule: Option<&NoiseSchedule>,
    guidance_scale: Option<f64>,
    condition: &str,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let grid = StepGrid::new(steps, t_start, t_end).map_err(to_py)?;
    let guidance = match guidance_scale {
        Some(c) => GuidanceSpec::cfg(condition, c),
        None => GuidanceSpec::none(condition),
    };
    let traj = ddim_trajectory(&noise, &grid, &oracle.0, &guidance, &schedule_or_default(schedule))
        .map_err(to_py)?;
    Ok((traj.sample().to_vec(), traj.final_iterate().to_vec()))
}

/// Image-space distillation with method `"sds"`, `"fsd"` or `"fsd-euler"`
/// and that method's defaults; returns the final parameters.
#[pyfunction]
#[pyo3(signature = (oracle, method, iterations=500, seed=0, learning_rate=None, schedule=None))]
fn distill_2d(
    oracle: &MixtureOracle,
    method: &str,
    iterations: usize,
    seed: u64,
    learning_rate: Option<f64>,
    schedule: Option<&NoiseSchedule>,
) -> PyResult<Vec<f64>> {
    let mut cfg = match method {
        "sds" => DistillConfig::sds(iterations),
        "fsd" => DistillConfig::fsd(iterations),
        "fsd-euler" => DistillConfig::fsd_euler(iterations),
        other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
    };
    if let Some(lr) = learning_rate {
        cfg.learning_rate = lr;
    }
    let sched = schedule_or_default(schedule);
    let dim = oracle.0.dim();
    let noise = NoiseSource::for_method(cfg.method, dim, seed);
    let theta0 = match (&noise, cfg.method) {
        (NoiseSource::Fixed(e), Method::FsdEuler) => {
            clean_from_initial_noise(e, cfg.plan.t_start, &sched).map_err(to_py)?
        }
        _ => vec![0.0; dim],
    };
    run_distill_2d(&theta0, &cfg, &noise, &oracle.0, &sched, seed)
        .map(|o| o.theta)
        .map_err(to_py)
}

/// Standard normals from the seed's initial-noise stream.
#[pyfunction]
fn initial_noise(seed: u64, dim: usize) -> Vec<f64> {
    Stream::new(seed, StreamId::InitialNoise).normal_vec(dim)
}

#[pyclass(name = "Camera", frozen)]
struct Camera(CoreCamera);

#[pymethods]
impl Camera {
    /// Angles in radians.
    #[new]
    #[pyo3(signature = (theta, phi, fov=40f64.to_radians(), radius=2.5))]
    fn new(theta: f64, phi: f64, fov: f64, radius: f64) -> PyResult<Self> {
        CoreCamera::new(fov, radius, theta, phi).map(Self).map_err(to_py)
    }

    fn position(&self) -> [f64; 3] {
        self.0.position()
    }
}

#[pyclass(name = "WorldMapNoise", frozen)]
struct WorldMapNoise(CoreWorldMap);

#[pymethods]
impl WorldMapNoise {
    #[new]
    #[pyo3(signature = (height, width, theta_extent, beta=1.0, seed=0, channels=3))]
    fn new(
        height: usize,
        width: usize,
        theta_extent: f64,
        beta: f64,
        seed: u64,
        channels: usize,
    ) -> PyResult<Self> {
        CoreWorldMap::new(channels, height, width, theta_extent, beta, seed)
            .map(Self)
            .map_err(to_py)
    }

    #[getter]
    fn map_shape(&self) -> (usize, usize, usize) {
        self.0.map_dims()
    }

    /// `mask` is `h*w` booleans (all foreground when omitted); `seed` feeds
    /// the fresh-noise part when `beta < 1`.
    #[pyo3(signature = (camera, mask=None, seed=0))]
    fn query(&self, camera: &Camera, mask: Option<Vec<bool>>, seed: u64) -> PyResult<Vec<f64>> {
        let (_, h, w) = self.0.patch_dims();
        let mask = match mask {
            Some(values) => QueryMask {
                height: h,
                width: w,
                values,
            },
            None => QueryMask::filled(h, w, true),
        };
        if mask.values.len() != h * w {
            return Err(PyValueError::new_err(format!(
                "mask needs {} entries, got {}",
                h * w,
                mask.values.len()
            )));
        }
        let mut rng = Stream::new(seed, StreamId::BlendNoise);
        self.0.query(&camera.0, &mask, &mut rng).map_err(to_py)
    }
}

#[pyfunction]
fn r_plus(camera: &Camera, theta_extent: f64) -> PyResult<(f64, f64)> {
    core_r_plus(&camera.0, theta_extent).map_err(to_py)
}

#[pyclass(name = "VoxelScene")]
struct VoxelScene(CoreScene);

#[pymethods]
impl VoxelScene {
    #[new]
    #[pyo3(signature = (resolution=16, density_pre=-1.0, color_pre=0.0, jitter=0.0, background=[0.5, 0.5, 0.5], seed=0))]
    fn new(
        resolution: usize,
        density_pre: f64,
        color_pre: f64,
        jitter: f64,
        background: [f64; 3],
        seed: u64,
    ) -> PyResult<Self> {
        CoreScene::jittered(resolution, density_pre, color_pre, jitter, background, seed)
            .map(Self)
            .map_err(to_py)
    }

    #[getter]
    fn param_len(&self) -> usize {
        self.0.param_len()
    }

    /// Returns `(image, opacity)`: `3*h*w` channel-major and `h*w`.
    #[pyo3(signature = (camera, height=8, width=8, samples_per_ray=32))]
    fn render(
        &self,
        camera: &Camera,
        height: usize,
        width: usize,
        samples_per_ray: usize,
    ) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let opts = RenderOptions {
            height,
            width,
            samples_per_ray,
            ..RenderOptions::default()
        };
        let out = core_render(&self.0, &camera.0, &opts).map_err(to_py)?;
        Ok((out.image, out.opacity.values))
    }
}

/// Returns `(dispersion, mode_histogram)`.
#[pyfunction]
fn ensemble_diversity(
    endpoints: Vec<Vec<f64>>,
    oracle: &MixtureOracle,
) -> PyResult<(f64, Vec<usize>)> {
    let r = core_ensemble(&endpoints, &oracle.0).map_err(to_py)?;
    Ok((r.dispersion, r.mode_histogram))
}

/// Runs an experiment from a JSON config string; returns `(passed, summary)`.
#[pyfunction]
fn run_experiment(config_json: &str, out_dir: &str) -> PyResult<(bool, String)> {
    let cfg = RunConfig::from_json(config_json).map_err(to_py)?;
    let o = core_run(&cfg, Path::new(out_dir)).map_err(to_py)?;
    Ok((o.passed, o.summary))
}

#[pymodule]
fn flowdistill_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<NoiseSchedule>()?;
    m.add_class::<MixtureOracle>()?;
    m.add_class::<Camera>()?;
    m.add_class::<WorldMapNoise>()?;
    m.add_class::<VoxelScene>()?;
    m.add_function(wrap_pyfunction!(ddim_sample, m)?)?;
    m.add_function(wrap_pyfunction!(distill_2d, m)?)?;
    m.add_function(wrap_pyfunction!(initial_noise, m)?)?;
    m.add_function(wrap_pyfunction!(r_plus, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble_diversity, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
