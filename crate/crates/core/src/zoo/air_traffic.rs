//! Hierarchical AR(1) regression with two covariates.
//!
//! `y_{t+1,j} ~ Normal(alpha_j + beta_j y_{t,j} + gamma_j u_{t,j} + delta_j v_{t,j}, sigma_j)`
//! with normal hierarchies on the four coefficients and on `log sigma_j`.
//! A group of length `T` holds rows `t = 0..T`: `y_0 ~ Normal(0.5, 1)` and
//! `T - 1` autoregressive steps. Covariates are standard normal and
//! standardized within each group; the last covariate row is never used.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generative::{
    normal_log_pdf, DataDims, GlobalParams, GroupData, HyperRef, ModelSpec, ParamInfo,
    ParamLayout, Prior, SizeDistribution, SizeRange, Transform, MIN_SCALE,
};
use crate::rng::SimRng;

pub const COEFFICIENTS: [&str; 5] = ["alpha", "beta", "gamma", "delta", "log_sigma"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AirTrafficConfig {
    /// Priors on the five hierarchical means (alpha, beta, gamma, delta, log sigma).
    pub mean_priors: [Prior; 5],
    /// Priors on the five hierarchical standard deviations.
    pub sd_priors: [Prior; 5],
    /// Distribution of the initial value `y_0`.
    pub y0_mean: f64,
    pub y0_sd: f64,
    pub sizes: SizeDistribution,
}

impl Default for AirTrafficConfig {
    fn default() -> Self {
        let n = |mean, sd| Prior::Normal { mean, sd };
        let h = |sd| Prior::HalfNormal { sd };
        AirTrafficConfig {
            mean_priors: [n(0.0, 0.5), n(0.0, 0.2), n(0.0, 0.5), n(0.0, 0.5), n(-1.0, 0.5)],
            sd_priors: [h(0.25), h(0.15), h(0.25), h(0.25), h(1.0)],
            y0_mean: 0.5,
            y0_sd: 1.0,
            sizes: SizeDistribution {
                groups: SizeRange::new(10, 30),
                obs: SizeRange::new(5, 30),
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct AirTraffic {
    config: AirTrafficConfig,
    layout: ParamLayout,
}

impl AirTraffic {
    pub fn new(config: AirTrafficConfig) -> Self {
        let mut tau: Vec<ParamInfo> = COEFFICIENTS
            .iter()
            .map(|c| ParamInfo::new(format!("mu_{c}"), Transform::Identity))
            .collect();
        tau.extend(
            COEFFICIENTS
                .iter()
                .map(|c| ParamInfo::new(format!("sigma_{c}"), Transform::Log)),
        );
        let local = COEFFICIENTS
            .iter()
            .map(|&c| match c {
                "log_sigma" => ParamInfo::new("sigma", Transform::Log),
                _ => ParamInfo::new(c, Transform::Identity),
            })
            .collect();
        AirTraffic {
            config,
            layout: ParamLayout {
                tau,
                omega: vec![],
                local,
            },
        }
    }

    fn mean(local: &[f64], y_prev: f64, cov: &[f64]) -> f64 {
        local[0] + local[1] * y_prev + local[2] * cov[0] + local[3] * cov[1]
    }
}

impl ModelSpec for AirTraffic {
    fn id(&self) -> &str {
        "air-traffic"
    }

    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn data_dims(&self) -> DataDims {
        DataDims {
            obs: 1,
            cov: Some(2),
            sequential: true,
        }
    }

    fn sizes(&self) -> SizeDistribution {
        self.config.sizes
    }

    fn validate(&self) -> Result<()> {
        for p in self.config.mean_priors.iter().chain(&self.config.sd_priors) {
            p.validate()?;
        }
        if self.config.sd_priors.iter().any(|p| p.transform() != Transform::Log) {
            return Err(Error::config("hierarchical sd priors must be positive"));
        }
        if !(self.config.y0_sd > 0.0) {
            return Err(Error::config("y0_sd must be positive"));
        }
        self.config.sizes.validate()
    }

    fn sample_global(&self, rng: &mut SimRng) -> GlobalParams {
        let mut tau: Vec<f64> = self.config.mean_priors.iter().map(|p| p.sample(rng)).collect();
        tau.extend(self.config.sd_priors.iter().map(|p| p.sample_unconstrained(rng)));
        GlobalParams { tau, omega: vec![] }
    }

    fn sample_local(&self, global: &GlobalParams, rng: &mut SimRng) -> Vec<f64> {
        (0..5)
            .map(|k| {
                let sd = global.tau[5 + k].exp().max(MIN_SCALE);
                global.tau[k] + sd * rng.sample::<f64, _>(StandardNormal)
            })
            .collect()
    }

    fn sample_covariates(&self, n_obs: usize, rng: &mut SimRng) -> Option<Array2<f64>> {
        let mut cov = Array2::from_shape_fn((n_obs, 2), |_| rng.sample::<f64, _>(StandardNormal));
        for mut col in cov.columns_mut() {
            let mean = col.mean().unwrap_or(0.0);
            col.mapv_inplace(|v| v - mean);
            if n_obs > 1 {
                let sd = col.std(1.0);
                if sd > 0.0 {
                    col.mapv_inplace(|v| v / sd);
                }
            }
        }
        Some(cov)
    }

    fn simulate_observations(
        &self,
        local: &[f64],
        _omega: &[f64],
        n_obs: usize,
        covariates: Option<&Array2<f64>>,
        rng: &mut SimRng,
    ) -> Result<Array2<f64>> {
        let cov = covariates.ok_or_else(|| Error::argument("air-traffic needs covariates"))?;
        if cov.nrows() != n_obs {
            return Err(Error::argument("covariate rows must match series length"));
        }
        let sigma = local[4].exp();
        let mut y = Array2::zeros((n_obs, 1));
        y[[0, 0]] = self.config.y0_mean + self.config.y0_sd * rng.sample::<f64, _>(StandardNormal);
        for t in 1..n_obs {
            let c = [cov[[t - 1, 0]], cov[[t - 1, 1]]];
            y[[t, 0]] = Self::mean(local, y[[t - 1, 0]], &c)
                + sigma * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(y)
    }

    fn log_prior_global(&self, global: &GlobalParams) -> f64 {
        let means: f64 = self
            .config
            .mean_priors
            .iter()
            .zip(&global.tau[..5])
            .map(|(p, &v)| p.log_density(v))
            .sum();
        let sds: f64 = self
            .config
            .sd_priors
            .iter()
            .zip(&global.tau[5..])
            .map(|(p, &u)| p.log_density_unconstrained(u))
            .sum();
        means + sds
    }

    fn log_prior_local(&self, local: &[f64], global: &GlobalParams) -> f64 {
        (0..5)
            .map(|k| normal_log_pdf(local[k], global.tau[k], global.tau[5 + k].exp()))
            .sum()
    }

    fn log_likelihood(&self, group: &GroupData, local: &[f64], _omega: &[f64]) -> Option<Result<f64>> {
        let Some(cov) = group.covariates.as_ref() else {
            return Some(Err(Error::argument("air-traffic group without covariates")));
        };
        let y = group.observations.column(0);
        let sigma = local[4].exp();
        let mut ll = normal_log_pdf(y[0], self.config.y0_mean, self.config.y0_sd);
        for t in 1..y.len() {
            let c = [cov[[t - 1, 0]], cov[[t - 1, 1]]];
            ll += normal_log_pdf(y[t], Self::mean(local, y[t - 1], &c), sigma);
        }
        Some(Ok(ll))
    }

    fn one_step_ahead(
        &self,
        group: &GroupData,
        t: usize,
        local: &[f64],
        _omega: &[f64],
        rng: &mut SimRng,
    ) -> Option<f64> {
        let cov = group.covariates.as_ref()?;
        if t == 0 || t >= group.n_obs() {
            return None;
        }
        let c = [cov[[t - 1, 0]], cov[[t - 1, 1]]];
        let mean = Self::mean(local, group.observations[[t - 1, 0]], &c);
        Some(mean + local[4].exp() * rng.sample::<f64, _>(StandardNormal))
    }

    fn hierarchy(&self, local_index: usize) -> Option<HyperRef> {
        (local_index < 5).then_some(HyperRef::Param {
            mean: local_index,
            log_sd: 5 + local_index,
        })
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "id": self.id(), "config": self.config })
    }
}
