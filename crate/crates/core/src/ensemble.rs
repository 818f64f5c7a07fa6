//! Seed-ensemble diversity summaries.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::oracle::MixtureOracle;
use crate::vecops::dist;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleReport {
    pub seeds: Vec<u64>,
    pub endpoints: Vec<Vec<f64>>,
    pub pairwise_distance: Vec<Vec<f64>>,
    /// Mean Euclidean distance over unordered pairs.
    pub dispersion: f64,
    /// Endpoint count per nearest mixture mean.
    pub mode_histogram: Vec<usize>,
    /// Wall-clock seconds; kept out of serialized output so reruns compare
    /// byte for byte.
    #[serde(skip)]
    pub runtime_secs: f64,
}

impl EnsembleReport {
    pub fn mode_fractions(&self) -> Vec<f64> {
        let n = self.endpoints.len() as f64;
        self.mode_histogram.iter().map(|&c| c as f64 / n).collect()
    }
}

/// Seeds default to `0..n`; callers that know the real seeds overwrite them.
pub fn ensemble_diversity(endpoints: &[Vec<f64>], oracle: &MixtureOracle) -> Result<EnsembleReport> {
    if endpoints.len() < 2 {
        return Err(Error::Config(format!(
            "diversity needs at least 2 endpoints, got {}",
            endpoints.len()
        )));
    }
    for e in endpoints {
        Error::check_dim(oracle.dim(), e.len())?;
    }
    let n = endpoints.len();
    let mut pairwise = vec![vec![0.0; n]; n];
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = dist(&endpoints[i], &endpoints[j]);
            pairwise[i][j] = d;
            pairwise[j][i] = d;
            total += d;
        }
    }
    let mut mode_histogram = vec![0; oracle.components().len()];
    for e in endpoints {
        mode_histogram[oracle.nearest_component(e)] += 1;
    }
    Ok(EnsembleReport {
        seeds: (0..n as u64).collect(),
        endpoints: endpoints.to_vec(),
        pairwise_distance: pairwise,
        dispersion: total / (n * (n - 1) / 2) as f64,
        mode_histogram,
        runtime_secs: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::Component;

    fn bimodal() -> MixtureOracle {
        MixtureOracle::unconditional(vec![
            Component::new(0.5, vec![2.0], 0.1),
            Component::new(0.5, vec![-2.0], 0.1),
        ])
        .unwrap()
    }

    #[test]
    fn identical_endpoints_have_zero_dispersion() {
        let r = ensemble_diversity(&[vec![0.3], vec![0.3]], &bimodal()).unwrap();
        assert_eq!(r.dispersion, 0.0);
    }

    #[test]
    fn split_endpoints_dispersion() {
        let mut e = vec![vec![2.0]; 16];
        e.extend(vec![vec![-2.0]; 16]);
        let r = ensemble_diversity(&e, &bimodal()).unwrap();
        // 16 * 16 cross pairs at distance 4 out of 32 * 31 / 2 pairs
        let want = 4.0 * (2.0 * 16.0 * 16.0) / (32.0 * 31.0);
        assert!((r.dispersion - want).abs() < 1e-12);
        assert!((r.dispersion - 2.065).abs() < 1e-3);
        assert_eq!(r.mode_histogram, vec![16, 16]);
        assert_eq!(r.mode_histogram.iter().sum::<usize>(), 32);
    }

    #[test]
    fn single_endpoint_is_rejected() {
        assert!(ensemble_diversity(&[vec![1.0]], &bimodal()).is_err());
    }
}
