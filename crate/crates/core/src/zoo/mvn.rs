//! Correlated Gaussian hierarchy with an LKJ prior on the correlation matrix.
//!
//! `lambda_j ~ Normal(mu, diag(sigma) Omega diag(sigma))`, observations
//! `y_ij ~ Normal(lambda_j, obs_var * I)`. The correlation matrix is carried
//! as `atanh` of its canonical partial correlations (CPCs), ordered
//! row-major over the strict lower triangle of the Cholesky factor. It is
//! reported as the off-diagonals of `Omega`, row-major over the upper
//! triangle.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::generative::{
    normal_log_pdf, DataDims, GlobalParams, GroupData, HyperRef, ModelSpec, ParamInfo,
    ParamLayout, Prior, SizeDistribution, SizeRange, Transform,
};
use crate::rng::SimRng;

/// Onion-method draw of a `d x d` correlation matrix from LKJ(`eta`).
pub fn lkj_onion<R: Rng + ?Sized>(d: usize, eta: f64, rng: &mut R) -> DMatrix<f64> {
    let mut r = DMatrix::identity(d, d);
    if d < 2 {
        return r;
    }
    let mut b = eta + (d as f64 - 2.0) / 2.0;
    let r12 = 2.0 * Beta::new(b, b).expect("positive shape").sample(rng) - 1.0;
    r[(0, 1)] = r12;
    r[(1, 0)] = r12;
    for k in 2..d {
        b -= 0.5;
        let y = Beta::new(k as f64 / 2.0, b).expect("positive shape").sample(rng);
        let w = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z = w.normalize() * y.sqrt();
        let a = r
            .view((0, 0), (k, k))
            .into_owned()
            .cholesky()
            .expect("onion iterate is positive definite")
            .l();
        let q = a * z;
        for i in 0..k {
            r[(i, k)] = q[i];
            r[(k, i)] = q[i];
        }
    }
    r
}

/// Canonical partial correlations of a correlation matrix, row-major over the
/// strict lower triangle.
pub fn corr_to_cpc(corr: &DMatrix<f64>) -> Result<Vec<f64>> {
    let d = corr.nrows();
    let l = corr
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numeric("correlation matrix is not positive definite"))?
        .l();
    let mut cpc = Vec::with_capacity(d * (d - 1) / 2);
    for i in 1..d {
        let mut rem: f64 = 1.0;
        for j in 0..i {
            let v = l[(i, j)] / rem.sqrt();
            cpc.push(v);
            rem -= l[(i, j)] * l[(i, j)];
        }
    }
    Ok(cpc)
}

/// Cholesky factor of the correlation matrix built from CPCs.
pub fn cpc_to_cholesky(cpc: &[f64], d: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(d, d);
    l[(0, 0)] = 1.0;
    let mut idx = 0;
    for i in 1..d {
        let mut rem: f64 = 1.0;
        for j in 0..i {
            let v = cpc[idx] * rem.sqrt();
            idx += 1;
            l[(i, j)] = v;
            rem -= v * v;
        }
        l[(i, i)] = rem.max(0.0).sqrt();
    }
    l
}

/// Log density of LKJ(`eta`) expressed on the `atanh(cpc)` scale, Jacobian
/// included. Each CPC in column `j` is a Beta(b, b) variable on (-1, 1) with
/// `b = eta + (d - 2 - j) / 2`.
pub fn lkj_log_density_atanh(z: &[f64], d: usize, eta: f64) -> f64 {
    let mut lp = 0.0;
    let mut idx = 0;
    for i in 1..d {
        for j in 0..i {
            let b = eta + (d as f64 - 2.0 - j as f64) / 2.0;
            let c = z[idx].tanh();
            idx += 1;
            let one_minus = 1.0 - c * c;
            let log_norm = (2.0 * b - 1.0) * std::f64::consts::LN_2 + 2.0 * ln_gamma(b)
                - ln_gamma(2.0 * b);
            lp += (b - 1.0) * one_minus.ln() - log_norm + one_minus.ln();
        }
    }
    lp
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MvnConfig {
    pub dim: usize,
    pub mu_prior: Prior,
    pub sigma_prior: Prior,
    pub lkj_eta: f64,
    /// Observation variance per coordinate.
    pub obs_var: f64,
    pub sizes: SizeDistribution,
}

impl Default for MvnConfig {
    fn default() -> Self {
        MvnConfig {
            dim: 4,
            mu_prior: Prior::Normal {
                mean: 0.0,
                sd: 0.3f64.sqrt(),
            },
            sigma_prior: Prior::Exponential { rate: 5.0 },
            lkj_eta: 2.0,
            obs_var: 0.1,
            sizes: SizeDistribution {
                groups: SizeRange::fixed(10),
                obs: SizeRange::fixed(10),
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct MvnHier {
    config: MvnConfig,
    layout: ParamLayout,
}

impl MvnHier {
    pub fn new(config: MvnConfig) -> Self {
        let d = config.dim;
        let mut tau: Vec<ParamInfo> = (1..=d)
            .map(|k| ParamInfo::new(format!("mu_{k}"), Transform::Identity))
            .collect();
        tau.extend((1..=d).map(|k| ParamInfo::new(format!("sigma_{k}"), Transform::Log)));
        for i in 1..d {
            for j in 0..i {
                tau.push(ParamInfo::new(format!("cpc_{}{}", i + 1, j + 1), Transform::Identity));
            }
        }
        let local = (1..=d)
            .map(|k| ParamInfo::new(format!("lambda_{k}"), Transform::Identity))
            .collect();
        MvnHier {
            config,
            layout: ParamLayout {
                tau,
                omega: vec![],
                local,
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    fn num_corr(&self) -> usize {
        self.config.dim * (self.config.dim - 1) / 2
    }

    /// Cholesky factor of the local covariance.
    fn covariance_factor(&self, tau: &[f64]) -> DMatrix<f64> {
        let d = self.config.dim;
        let cpc: Vec<f64> = tau[2 * d..].iter().map(|z| z.tanh()).collect();
        let l = cpc_to_cholesky(&cpc, d);
        DMatrix::from_fn(d, d, |i, j| tau[d + i].exp() * l[(i, j)])
    }

    /// Correlation matrix encoded in a global vector.
    pub fn correlation(&self, tau: &[f64]) -> DMatrix<f64> {
        let d = self.config.dim;
        let cpc: Vec<f64> = tau[2 * d..].iter().map(|z| z.tanh()).collect();
        let l = cpc_to_cholesky(&cpc, d);
        &l * l.transpose()
    }
}

impl ModelSpec for MvnHier {
    fn id(&self) -> &str {
        "mvn-hier"
    }

    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn data_dims(&self) -> DataDims {
        DataDims {
            obs: self.config.dim,
            cov: None,
            sequential: false,
        }
    }

    fn sizes(&self) -> SizeDistribution {
        self.config.sizes
    }

    fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.mu_prior.validate()?;
        c.sigma_prior.validate()?;
        if c.sigma_prior.transform() != Transform::Log {
            return Err(Error::config("sigma prior must be positive"));
        }
        if c.dim < 2 {
            return Err(Error::config("mvn-hier needs dim >= 2"));
        }
        if !(c.lkj_eta > 0.0 && c.obs_var > 0.0) {
            return Err(Error::config("lkj_eta and obs_var must be positive"));
        }
        c.sizes.validate()
    }

    fn sample_global(&self, rng: &mut SimRng) -> GlobalParams {
        let d = self.config.dim;
        let mut tau: Vec<f64> = (0..d).map(|_| self.config.mu_prior.sample(rng)).collect();
        tau.extend((0..d).map(|_| self.config.sigma_prior.sample_unconstrained(rng)));
        let corr = lkj_onion(d, self.config.lkj_eta, rng);
        let cpc = corr_to_cpc(&corr).expect("onion draws are positive definite");
        tau.extend(cpc.iter().map(|c| c.clamp(-1.0 + 1e-12, 1.0 - 1e-12).atanh()));
        GlobalParams { tau, omega: vec![] }
    }

    fn sample_local(&self, global: &GlobalParams, rng: &mut SimRng) -> Vec<f64> {
        let d = self.config.dim;
        let l = self.covariance_factor(&global.tau);
        let e = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = l * e;
        (0..d).map(|k| global.tau[k] + x[k]).collect()
    }

    fn simulate_observations(
        &self,
        local: &[f64],
        _omega: &[f64],
        n_obs: usize,
        _covariates: Option<&Array2<f64>>,
        rng: &mut SimRng,
    ) -> Result<Array2<f64>> {
        let sd = self.config.obs_var.sqrt();
        Ok(Array2::from_shape_fn((n_obs, self.config.dim), |(_, k)| {
            local[k] + sd * rng.sample::<f64, _>(StandardNormal)
        }))
    }

    fn log_prior_global(&self, global: &GlobalParams) -> f64 {
        let d = self.config.dim;
        let t = &global.tau;
        let mu: f64 = t[..d].iter().map(|&v| self.config.mu_prior.log_density(v)).sum();
        let sd: f64 = t[d..2 * d]
            .iter()
            .map(|&u| self.config.sigma_prior.log_density_unconstrained(u))
            .sum();
        mu + sd + lkj_log_density_atanh(&t[2 * d..], d, self.config.lkj_eta)
    }

    fn log_prior_local(&self, local: &[f64], global: &GlobalParams) -> f64 {
        let d = self.config.dim;
        let l = self.covariance_factor(&global.tau);
        let diff = DVector::from_fn(d, |k, _| local[k] - global.tau[k]);
        let Some(z) = l.solve_lower_triangular(&diff) else {
            return f64::NEG_INFINITY;
        };
        let log_det: f64 = (0..d).map(|k| l[(k, k)].ln()).sum();
        -0.5 * z.norm_squared() - log_det - 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    fn log_likelihood(&self, group: &GroupData, local: &[f64], _omega: &[f64]) -> Option<Result<f64>> {
        let sd = self.config.obs_var.sqrt();
        Some(Ok(group
            .observations
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .zip(local)
                    .map(|(&y, &m)| normal_log_pdf(y, m, sd))
                    .sum::<f64>()
            })
            .sum()))
    }

    fn hierarchy(&self, local_index: usize) -> Option<HyperRef> {
        let d = self.config.dim;
        (local_index < d).then_some(HyperRef::Param {
            mean: local_index,
            log_sd: d + local_index,
        })
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "id": self.id(), "config": self.config })
    }

    fn global_to_constrained(&self, global: &[f64]) -> Vec<f64> {
        let d = self.config.dim;
        let mut out: Vec<f64> = global[..d].to_vec();
        out.extend(global[d..2 * d].iter().map(|u| u.exp()));
        let corr = self.correlation(global);
        for i in 0..d {
            for j in i + 1..d {
                out.push(corr[(i, j)]);
            }
        }
        debug_assert_eq!(out.len(), 2 * d + self.num_corr());
        out
    }

    fn constrained_global_names(&self) -> Vec<String> {
        let d = self.config.dim;
        let mut names: Vec<String> = (1..=d).map(|k| format!("mu_{k}")).collect();
        names.extend((1..=d).map(|k| format!("sigma_{k}")));
        for i in 0..d {
            for j in i + 1..d {
                names.push(format!("omega_{}{}", i + 1, j + 1));
            }
        }
        names
    }
}
