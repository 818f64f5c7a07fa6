//! JSON run configuration. Sections left out of a file fall back to
//! per-experiment defaults when the run starts.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::camera::CameraSampler;
use crate::distill::{DistillConfig, Method};
use crate::error::{Error, Result};
use crate::oracle::{Component, GuidanceSpec, MixtureOracle};
use crate::scene::{RenderOptions, VoxelScene};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    DdimSample,
    #[serde(rename = "distill-2d")]
    Distill2d,
    #[serde(rename = "distill-3d")]
    Distill3d,
    #[serde(rename = "verify-prop1")]
    VerifyProp1,
    NoiseStats,
    RplusCheck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::DdimSample,
        ExperimentKind::Distill2d,
        ExperimentKind::Distill3d,
        ExperimentKind::VerifyProp1,
        ExperimentKind::NoiseStats,
        ExperimentKind::RplusCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::DdimSample => "ddim-sample",
            ExperimentKind::Distill2d => "distill-2d",
            ExperimentKind::Distill3d => "distill-3d",
            ExperimentKind::VerifyProp1 => "verify-prop1",
            ExperimentKind::NoiseStats => "noise-stats",
            ExperimentKind::RplusCheck => "rplus-check",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub components: Vec<Component>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub condition_sets: BTreeMap<String, Vec<usize>>,
}

impl OracleSpec {
    pub fn build(&self) -> Result<MixtureOracle> {
        MixtureOracle::new(self.components.clone(), self.condition_sets.clone())
    }

    /// Equal-weight 1D mixture at `+-2` with stddev 0.1.
    pub fn bimodal_1d() -> Self {
        Self {
            components: vec![
                Component::new(0.5, vec![2.0], 0.1),
                Component::new(0.5, vec![-2.0], 0.1),
            ],
            condition_sets: BTreeMap::new(),
        }
    }

    /// Three-component 2D mixture with distinct weights and spreads.
    pub fn trimodal_2d() -> Self {
        Self {
            components: vec![
                Component::new(0.5, vec![1.5, 0.5], 0.3),
                Component::new(0.3, vec![-1.0, 1.2], 0.2),
                Component::new(0.2, vec![0.2, -1.6], 0.4),
            ],
            condition_sets: BTreeMap::new(),
        }
    }

    /// Uniform red and uniform blue `3 x h x w` images, equal weight.
    pub fn red_blue(height: usize, width: usize, stddev: f64) -> Self {
        let plane = height * width;
        let solid = |rgb: [f64; 3]| -> Vec<f64> {
            rgb.iter().flat_map(|&v| std::iter::repeat_n(v, plane)).collect()
        };
        Self {
            components: vec![
                Component::new(0.5, solid([1.0, 0.0, 0.0]), stddev),
                Component::new(0.5, solid([0.0, 0.0, 1.0]), stddev),
            ],
            condition_sets: BTreeMap::new(),
        }
    }
}

/// DDIM step grid and guidance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub steps: usize,
    pub t_start: f64,
    pub t_end: f64,
    #[serde(default)]
    pub guidance: GuidanceSpec,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self {
            steps: 50,
            t_start: 0.98,
            t_end: 0.02,
            guidance: GuidanceSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseFieldSpec {
    WorldMap {
        /// Angular extent of one window in degrees.
        theta_extent_deg: f64,
        /// Blending factor between deterministic and fresh noise.
        beta: f64,
    },
    Constant,
    Iid,
}

impl Default for NoiseFieldSpec {
    fn default() -> Self {
        NoiseFieldSpec::WorldMap {
            theta_extent_deg: 90.0,
            beta: 1.0,
        }
    }
}

/// Starting voxel scene for 3D runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneInit {
    pub resolution: usize,
    pub density_pre: f64,
    pub color_pre: f64,
    pub jitter: f64,
    pub background: [f64; 3],
}

impl Default for SceneInit {
    fn default() -> Self {
        Self {
            resolution: 16,
            density_pre: -1.0,
            color_pre: 0.0,
            jitter: 0.5,
            background: [0.5, 0.5, 0.5],
        }
    }
}

impl SceneInit {
    pub fn build(&self, seed: u64) -> Result<VoxelScene> {
        VoxelScene::jittered(
            self.resolution,
            self.density_pre,
            self.color_pre,
            self.jitter,
            self.background,
            seed,
        )
    }
}

/// Sizes for the noise-statistics and r+ experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeSpec {
    pub n_views: usize,
    pub betas: Vec<f64>,
    /// Number of azimuth offsets in the correlation sweep.
    pub delta_phi_points: usize,
    pub theta_extents_deg: Vec<f64>,
    /// Camera turn used by the r+ geometric simulation (radians).
    pub delta: f64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            n_views: 10_000,
            betas: vec![0.0, 0.5, 1.0],
            delta_phi_points: 16,
            theta_extents_deg: vec![60.0, 90.0, 180.0],
            delta: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub schedule: NoiseSchedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distill: Option<DistillConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_field: Option<NoiseFieldSpec>,
    #[serde(default)]
    pub cameras: CameraSampler,
    #[serde(default)]
    pub render: RenderOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneInit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeSpec>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_out_dir() -> String {
    "out".into()
}

impl RunConfig {
    /// A config with every section left to its default.
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            schedule: NoiseSchedule::default(),
            oracle: None,
            distill: None,
            sampler: None,
            noise_field: None,
            cameras: CameraSampler::default(),
            render: RenderOptions::default(),
            scene: None,
            probe: None,
            seeds: default_seeds(),
            out_dir: default_out_dir(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn oracle_spec(&self) -> OracleSpec {
        self.oracle.clone().unwrap_or_else(|| match self.experiment {
            ExperimentKind::VerifyProp1 => OracleSpec::trimodal_2d(),
            ExperimentKind::Distill3d => {
                OracleSpec::red_blue(self.render.height, self.render.width, 0.1)
            }
            _ => OracleSpec::bimodal_1d(),
        })
    }

    pub fn distill_config(&self) -> DistillConfig {
        self.distill.clone().unwrap_or_else(|| match self.experiment {
            ExperimentKind::VerifyProp1 => DistillConfig::fsd_euler(50),
            ExperimentKind::Distill3d => DistillConfig {
                learning_rate: 2e-2,
                ..DistillConfig::fsd(600)
            },
            _ => DistillConfig::fsd(500),
        })
    }

    pub fn sampler_spec(&self) -> SamplerSpec {
        self.sampler.clone().unwrap_or_default()
    }

    pub fn noise_field_spec(&self) -> NoiseFieldSpec {
        self.noise_field.unwrap_or_else(|| match self.distill_config().method {
            Method::Sds => NoiseFieldSpec::Iid,
            _ => NoiseFieldSpec::default(),
        })
    }

    pub fn scene_init(&self) -> SceneInit {
        self.scene.unwrap_or_default()
    }

    pub fn probe_spec(&self) -> ProbeSpec {
        self.probe.clone().unwrap_or_default()
    }

    /// Checks everything the chosen experiment will use.
    pub fn validate(&self) -> Result<()> {
        use ExperimentKind::*;
        self.schedule.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let two_d = matches!(self.experiment, DdimSample | Distill2d | VerifyProp1);
        if two_d {
            if let Some(f) = &self.noise_field {
                return Err(Error::Config(format!(
                    "{} works on image parameters; noise-field settings ({f:?}) \
                     including beta mixing only apply to 3D runs",
                    self.experiment
                )));
            }
        }
        if matches!(self.experiment, Distill2d | VerifyProp1 | Distill3d | DdimSample) {
            let oracle = self.oracle_spec().build()?;
            if self.experiment != DdimSample {
                let d = self.distill_config();
                d.validate()?;
                d.guidance.validate(&oracle)?;
            }
            if self.experiment == DdimSample {
                let s = self.sampler_spec();
                crate::sampler::StepGrid::new(s.steps, s.t_start, s.t_end)?;
                s.guidance.validate(&oracle)?;
            }
            if self.experiment == VerifyProp1 && self.distill_config().method != Method::FsdEuler {
                return Err(Error::Config(
                    "verify-prop1 compares the fsd-euler update with DDIM; set method to fsd-euler"
                        .into(),
                ));
            }
            if self.experiment == Distill3d {
                self.render.validate()?;
                self.cameras.validate()?;
                if oracle.dim() != self.render.image_len() {
                    return Err(Error::Config(format!(
                        "oracle dimension {} does not match the {}x{} RGB render",
                        oracle.dim(),
                        self.render.height,
                        self.render.width
                    )));
                }
                let d = self.distill_config();
                if d.method == Method::FsdEuler {
                    return Err(Error::Config("fsd-euler is a 2D-only update".into()));
                }
                match (d.method, self.noise_field_spec()) {
                    (Method::Fsd, NoiseFieldSpec::Iid) => {
                        return Err(Error::Config(
                            "fsd needs a deterministic noise field, got iid".into(),
                        ))
                    }
                    (_, NoiseFieldSpec::WorldMap { theta_extent_deg, beta }) => {
                        check_world_map(theta_extent_deg, beta)?
                    }
                    _ => {}
                }
                let s = self.scene_init();
                VoxelScene::filled(s.resolution, 0.0, 0.0, s.background)?;
            }
        }
        if matches!(self.experiment, NoiseStats | RplusCheck) {
            self.cameras.validate()?;
            self.render.validate()?;
            let p = self.probe_spec();
            if self.experiment == NoiseStats {
                if p.n_views < 100 {
                    return Err(Error::Config(format!(
                        "noise-stats needs at least 100 views, got {}",
                        p.n_views
                    )));
                }
                if p.delta_phi_points < 2 {
                    return Err(Error::Config("need at least 2 azimuth offsets".into()));
                }
                for b in &p.betas {
                    check_world_map(90.0, *b)?;
                }
                if let NoiseFieldSpec::WorldMap { theta_extent_deg, beta } = self.noise_field_spec() {
                    check_world_map(theta_extent_deg, beta)?;
                }
            } else {
                for e in &p.theta_extents_deg {
                    check_world_map(*e, 1.0)?;
                }
                if !(p.delta > 0.0 && p.delta < 0.1) {
                    return Err(Error::Config(format!(
                        "r+ simulation turn must be in (0, 0.1) rad, got {}",
                        p.delta
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_world_map(theta_extent_deg: f64, beta: f64) -> Result<()> {
    if !(theta_extent_deg > 0.0 && theta_extent_deg <= 360.0) {
        return Err(Error::Config(format!(
            "world-map extent must be in (0, 360] degrees, got {theta_extent_deg}"
        )));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("beta {beta} outside [0, 1]")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_lossless() {
        let mut c = RunConfig::new(ExperimentKind::Distill3d);
        c.distill = Some(DistillConfig::sds(40));
        c.noise_field = Some(NoiseFieldSpec::WorldMap {
            theta_extent_deg: 60.0,
            beta: 0.25,
        });
        c.oracle = Some(OracleSpec::red_blue(8, 8, 0.1));
        c.seeds = vec![3, 1, 4];
        let back = RunConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn minimal_file_uses_defaults() {
        let c = RunConfig::from_json(r#"{"experiment": "verify-prop1"}"#).unwrap();
        c.validate().unwrap();
        assert_eq!(c.oracle_spec().build().unwrap().dim(), 2);
        assert_eq!(c.distill_config().plan.iterations, 50);
    }

    #[test]
    fn beta_on_2d_run_is_rejected() {
        let mut c = RunConfig::new(ExperimentKind::Distill2d);
        let mut d = DistillConfig::sds(100);
        d.plan = crate::schedule::TimestepPlan::linear(100);
        c.distill = Some(d);
        c.noise_field = Some(NoiseFieldSpec::WorldMap {
            theta_extent_deg: 90.0,
            beta: 0.5,
        });
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_fields_and_kinds() {
        assert!(RunConfig::from_json(r#"{"experiment": "nope"}"#).is_err());
        assert!("distill-3d".parse::<ExperimentKind>().is_ok());
        assert!("distill3d".parse::<ExperimentKind>().is_err());
    }

    #[test]
    fn serialized_names_match_cli_names() {
        for k in ExperimentKind::ALL {
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
    }

    #[test]
    fn fsd_with_iid_noise_is_rejected() {
        let mut c = RunConfig::new(ExperimentKind::Distill3d);
        c.noise_field = Some(NoiseFieldSpec::Iid);
        assert!(c.validate().is_err());
    }
}
