//! Exact noise prediction for isotropic Gaussian-mixture targets.
//!
//! For a target `p_0 = sum_i w_i N(mu_i, s_i^2 I)` the forward process gives
//! `p_t = sum_i w_i N(alpha_t mu_i, (alpha_t^2 s_i^2 + sigma_t^2) I)`, so the
//! optimal noise predictor `-sigma_t grad log p_t` is available in closed form.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

/// Reserved condition id that selects every component.
pub const UNCONDITIONAL: &str = "∅";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Isotropic standard deviation; zero is a point mass.
    pub stddev: f64,
}

impl Component {
    pub fn new(weight: f64, mean: Vec<f64>, stddev: f64) -> Self {
        Self {
            weight,
            mean,
            stddev,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureOracle {
    dim: usize,
    components: Vec<Component>,
    condition_sets: BTreeMap<String, Vec<usize>>,
}

impl MixtureOracle {
    /// Builds an oracle; the unconditional set is added when absent.
    pub fn new(
        components: Vec<Component>,
        mut condition_sets: BTreeMap<String, Vec<usize>>,
    ) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::Config("mixture needs at least one component".into()))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(Error::Config("mixture dimension must be positive".into()));
        }
        for (i, c) in components.iter().enumerate() {
            Error::check_dim(dim, c.mean.len())?;
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(Error::Config(format!(
                    "component {i} weight must be positive, got {}",
                    c.weight
                )));
            }
            if !(c.stddev >= 0.0 && c.stddev.is_finite()) {
                return Err(Error::Config(format!(
                    "component {i} stddev must be non-negative, got {}",
                    c.stddev
                )));
            }
        }
        condition_sets
            .entry(UNCONDITIONAL.to_string())
            .or_insert_with(|| (0..components.len()).collect());
        for (id, set) in &condition_sets {
            if set.is_empty() {
                return Err(Error::Config(format!("condition set {id:?} is empty")));
            }
            if let Some(&bad) = set.iter().find(|&&i| i >= components.len()) {
                return Err(Error::Config(format!(
                    "condition set {id:?} references component {bad} of {}",
                    components.len()
                )));
            }
        }
        Ok(Self {
            dim,
            components,
            condition_sets,
        })
    }

    /// Single-condition oracle where every id resolves to all components.
    pub fn unconditional(components: Vec<Component>) -> Result<Self> {
        Self::new(components, BTreeMap::new())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn condition_sets(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.condition_sets
    }

    fn condition(&self, id: &str) -> Result<&[usize]> {
        self.condition_sets
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Config(format!("unknown condition id {id:?}")))
    }

    /// Per-component log of `w_i N(x; alpha mu_i, v_i I)` (up to the shared
    /// `-d/2 log 2 pi`) and the variance `v_i`.
    fn component_terms(
        &self,
        x: &[f64],
        alpha: f64,
        sigma: f64,
        set: &[usize],
    ) -> Result<Vec<(f64, f64)>> {
        let total: f64 = set.iter().map(|&i| self.components[i].weight).sum();
        let d = self.dim as f64;
        set.iter()
            .map(|&i| {
                let c = &self.components[i];
                let var = alpha * alpha * c.stddev * c.stddev + sigma * sigma;
                if var <= 0.0 {
                    return Err(Error::SingularScore(format!(
                        "component {i} is a point mass at t = 0"
                    )));
                }
                let sq: f64 = x
                    .iter()
                    .zip(&c.mean)
                    .map(|(xi, mi)| {
                        let r = xi - alpha * mi;
                        r * r
                    })
                    .sum();
                let logit = (c.weight / total).ln() - 0.5 * d * var.ln() - 0.5 * sq / var;
                Ok((logit, var))
            })
            .collect()
    }

    /// `log p_t(x | condition)`.
    pub fn log_density(
        &self,
        x: &[f64],
        t: f64,
        schedule: &NoiseSchedule,
        condition: &str,
    ) -> Result<f64> {
        Error::check_dim(self.dim, x.len())?;
        let (alpha, sigma) = schedule.alpha_sigma(t)?;
        let terms = self.component_terms(x, alpha, sigma, self.condition(condition)?)?;
        let max = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + terms.iter().map(|t| (t.0 - max).exp()).sum::<f64>().ln();
        Ok(lse - 0.5 * self.dim as f64 * (2.0 * std::f64::consts::PI).ln())
    }

    /// `-sigma_t grad_x log p_t(x_t | condition)`.
    pub fn epsilon_pred(
        &self,
        x: &[f64],
        t: f64,
        schedule: &NoiseSchedule,
        condition: &str,
    ) -> Result<Vec<f64>> {
        Error::check_dim(self.dim, x.len())?;
        let (alpha, sigma) = schedule.alpha_sigma(t)?;
        let set = self.condition(condition)?;
        let terms = self.component_terms(x, alpha, sigma, set)?;
        let max = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
        let resp: Vec<f64> = terms.iter().map(|t| (t.0 - max).exp()).collect();
        let norm: f64 = resp.iter().sum();

        // sigma * sum_i r_i (x - alpha mu_i) / v_i
        let mut out = vec![0.0; self.dim];
        for ((&i, r), (_, var)) in set.iter().zip(&resp).zip(&terms) {
            let coef = sigma * (r / norm) / var;
            if coef == 0.0 {
                continue;
            }
            for ((o, xi), mi) in out.iter_mut().zip(x).zip(&self.components[i].mean) {
                *o += coef * (xi - alpha * mi);
            }
        }
        Ok(out)
    }

    /// Closed-form posterior mean `E[x_0 | x_t]` (independent of the
    /// epsilon parametrization; used to cross-check Tweedie's formula).
    pub fn posterior_mean(
        &self,
        x: &[f64],
        t: f64,
        schedule: &NoiseSchedule,
        condition: &str,
    ) -> Result<Vec<f64>> {
        Error::check_dim(self.dim, x.len())?;
        let (alpha, sigma) = schedule.alpha_sigma(t)?;
        let set = self.condition(condition)?;
        let terms = self.component_terms(x, alpha, sigma, set)?;
        let max = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
        let resp: Vec<f64> = terms.iter().map(|t| (t.0 - max).exp()).collect();
        let norm: f64 = resp.iter().sum();
        let mut out = vec![0.0; self.dim];
        for ((&i, r), (_, var)) in set.iter().zip(&resp).zip(&terms) {
            let c = &self.components[i];
            let w = r / norm;
            let gain = alpha * c.stddev * c.stddev / var;
            for ((o, xi), mi) in out.iter_mut().zip(x).zip(&c.mean) {
                *o += w * (mi + gain * (xi - alpha * mi));
            }
        }
        Ok(out)
    }

    /// Index of the component mean nearest to `x` (Euclidean).
    pub fn nearest_component(&self, x: &[f64]) -> usize {
        self.components
            .iter()
            .enumerate()
            .map(|(i, c)| (i, crate::vecops::dist_sq(x, &c.mean)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GuidanceMode {
    #[default]
    None,
    Cfg,
    NfsdStyle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSpec {
    pub mode: GuidanceMode,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default = "unconditional_id")]
    pub condition: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_condition: Option<String>,
}

fn one() -> f64 {
    1.0
}

fn unconditional_id() -> String {
    UNCONDITIONAL.to_string()
}

impl Default for GuidanceSpec {
    fn default() -> Self {
        Self::none(UNCONDITIONAL)
    }
}

impl GuidanceSpec {
    pub fn none(condition: &str) -> Self {
        Self {
            mode: GuidanceMode::None,
            scale: 1.0,
            condition: condition.to_string(),
            negative_condition: None,
        }
    }

    pub fn cfg(condition: &str, scale: f64) -> Self {
        Self {
            mode: GuidanceMode::Cfg,
            scale,
            condition: condition.to_string(),
            negative_condition: None,
        }
    }

    pub fn nfsd(condition: &str, negative: &str, scale: f64) -> Self {
        Self {
            mode: GuidanceMode::NfsdStyle,
            scale,
            condition: condition.to_string(),
            negative_condition: Some(negative.to_string()),
        }
    }

    pub fn validate(&self, oracle: &MixtureOracle) -> Result<()> {
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!(
                "guidance scale must be >= 0, got {}",
                self.scale
            )));
        }
        oracle.condition(&self.condition)?;
        match (&self.mode, &self.negative_condition) {
            (GuidanceMode::NfsdStyle, None) => Err(Error::Config(
                "nfsd-style guidance requires a negative condition".into(),
            )),
            (GuidanceMode::NfsdStyle, Some(neg)) => oracle.condition(neg).map(|_| ()),
            _ => Ok(()),
        }
    }
}

/// The guided prediction `none -> eps_y`, `cfg | nfsd-style -> eps_0 + c (eps_y - eps_0)`.
///
/// For nfsd-style guidance the negative prediction does not enter the
/// prediction itself; it replaces the injected noise as the subtracted term
/// of the distillation residual (see [`noise_reference`]).
pub fn guided_epsilon(
    oracle: &MixtureOracle,
    x: &[f64],
    t: f64,
    schedule: &NoiseSchedule,
    spec: &GuidanceSpec,
) -> Result<Vec<f64>> {
    spec.validate(oracle)?;
    let eps_y = oracle.epsilon_pred(x, t, schedule, &spec.condition)?;
    match spec.mode {
        GuidanceMode::None => Ok(eps_y),
        GuidanceMode::Cfg | GuidanceMode::NfsdStyle => {
            let eps_u = oracle.epsilon_pred(x, t, schedule, UNCONDITIONAL)?;
            Ok(eps_u
                .iter()
                .zip(&eps_y)
                .map(|(u, y)| u + spec.scale * (y - u))
                .collect())
        }
    }
}

/// The term subtracted from the guided prediction in a distillation residual:
/// the injected noise, or `eps_{y_neg}` for nfsd-style guidance.
pub fn noise_reference(
    oracle: &MixtureOracle,
    x: &[f64],
    t: f64,
    schedule: &NoiseSchedule,
    spec: &GuidanceSpec,
    injected: &[f64],
) -> Result<Vec<f64>> {
    match (&spec.mode, &spec.negative_condition) {
        (GuidanceMode::NfsdStyle, Some(neg)) => oracle.epsilon_pred(x, t, schedule, neg),
        _ => Ok(injected.to_vec()),
    }
}

/// One-step estimate of the clean sample, `(x_t - sigma_t eps) / alpha_t`.
pub fn x0_estimate(x: &[f64], eps: &[f64], t: f64, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    Error::check_dim(x.len(), eps.len())?;
    let (alpha, sigma) = schedule.alpha_sigma(t)?;
    if alpha < 1e-12 {
        return Err(Error::NumericDegenerate(format!(
            "alpha_t = {alpha:e} at t = {t}"
        )));
    }
    Ok(x.iter()
        .zip(eps)
        .map(|(xi, ei)| (xi - sigma * ei) / alpha)
        .collect())
}
