//! Affine standardization of parameters using prior moments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generative::{sample_global_prior, ModelSpec};
use crate::rng::seeded;

/// Fewest prior draws accepted for estimating moments.
pub const MIN_STATS_DRAWS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            sd: vec![1.0; dim],
        }
    }

    /// Moments of the rows of `samples`.
    pub fn fit(samples: &[Vec<f64>]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::config("need at least two samples to standardize"));
        }
        let dim = samples[0].len();
        let mut mean = vec![0.0; dim];
        for row in samples {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; dim];
        for row in samples {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let sd: Vec<f64> = var.iter().map(|v| (v / (n - 1) as f64).sqrt()).collect();
        if let Some(k) = sd.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::config(format!(
                "parameter component {k} has zero or undefined prior variance"
            )));
        }
        Ok(Standardizer { mean, sd })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn standardize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn destandardize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(x, (m, s))| x * s + m)
            .collect()
    }

    /// Log-Jacobian of `destandardize`.
    pub fn log_det(&self) -> f64 {
        self.sd.iter().map(|s| s.ln()).sum()
    }
}

/// Standardization of global and local parameter vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamStats {
    pub global: Standardizer,
    pub local: Standardizer,
    pub draws: usize,
}

impl ParamStats {
    /// Estimates moments from `draws` ancestral prior draws (one group each).
    pub fn estimate(spec: &dyn ModelSpec, draws: usize, seed: u64) -> Result<Self> {
        if draws < MIN_STATS_DRAWS {
            return Err(Error::config(format!(
                "standardization needs at least {MIN_STATS_DRAWS} prior draws, got {draws}"
            )));
        }
        let mut rng = seeded(seed);
        let mut globals = Vec::with_capacity(draws);
        let mut locals = Vec::with_capacity(draws);
        for _ in 0..draws {
            let g = sample_global_prior(spec, &mut rng)?;
            locals.push(spec.sample_local(&g, &mut rng));
            globals.push(g.concat());
        }
        Ok(ParamStats {
            global: Standardizer::fit(&globals)?,
            local: Standardizer::fit(&locals)?,
            draws,
        })
    }
}

/// Free-function form of [`Standardizer::standardize`].
pub fn standardize(values: &[f64], stats: &Standardizer) -> Vec<f64> {
    stats.standardize(values)
}

pub fn destandardize(values: &[f64], stats: &Standardizer) -> Vec<f64> {
    stats.destandardize(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::ModelConfig;
    use proptest::prelude::*;

    #[test]
    fn mean_maps_to_zero_and_unit_stats_are_identity() {
        let s = Standardizer {
            mean: vec![1.5, -2.0],
            sd: vec![0.5, 3.0],
        };
        assert_eq!(s.standardize(&[1.5, -2.0]), vec![0.0, 0.0]);
        let id = Standardizer::identity(2);
        assert_eq!(id.standardize(&[0.3, 7.0]), vec![0.3, 7.0]);
    }

    #[test]
    fn zero_variance_is_config_error() {
        let rows = vec![vec![1.0, 2.0], vec![1.0, 3.0], vec![1.0, 4.0]];
        assert!(matches!(Standardizer::fit(&rows), Err(Error::Config(_))));
    }

    #[test]
    fn too_few_draws_rejected_and_estimates_sane() {
        let spec = ModelConfig::from_id("normal-normal-b").unwrap().build().unwrap();
        assert!(ParamStats::estimate(spec.as_ref(), 999, 1).is_err());
        let st = ParamStats::estimate(spec.as_ref(), 4000, 1).unwrap();
        assert!(st.global.mean[0].abs() < 0.1 && (st.global.sd[0] - 1.0).abs() < 0.1);
        assert!((st.global.mean[1] + 1.0).abs() < 0.05 && (st.global.sd[1] - 0.5).abs() < 0.05);
    }

    proptest! {
        #[test]
        fn round_trip(v in prop::collection::vec(-1e3f64..1e3, 3), m in prop::collection::vec(-10f64..10.0, 3), s in prop::collection::vec(0.01f64..50.0, 3)) {
            let st = Standardizer { mean: m, sd: s };
            let back = st.destandardize(&st.standardize(&v));
            for (a, b) in v.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}
