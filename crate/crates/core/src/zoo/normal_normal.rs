//! Conjugate normal-normal model with a closed-form (variant A) or grid
//! (variant B) posterior oracle.
//!
//! `y_ij ~ Normal(lambda_j, sigma)`, `lambda_j ~ Normal(mu, tau)`,
//! `mu ~ Normal(0, 1)`. Variant A fixes `tau`; variant B puts
//! `log tau ~ Normal(-1, 0.5)` and carries `log tau` as its second
//! hyperparameter.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generative::{
    normal_log_pdf, Dataset, DataDims, GlobalParams, GroupData, HyperRef, ModelSpec, ParamInfo,
    ParamLayout, Prior, SizeDistribution, SizeRange, Transform, MIN_SCALE,
};
use crate::posterior::{PosteriorDraws, PosteriorSampler};
use crate::rng::SimRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    A,
    B,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalNormalConfig {
    /// Known observation noise.
    pub sigma_obs: f64,
    pub mu_prior: Prior,
    /// Group-level sd under variant A.
    pub tau_known: f64,
    /// Prior on `log tau` under variant B.
    pub log_tau_prior: Prior,
    pub sizes: SizeDistribution,
}

impl Default for NormalNormalConfig {
    fn default() -> Self {
        NormalNormalConfig {
            sigma_obs: 1.0,
            mu_prior: Prior::Normal { mean: 0.0, sd: 1.0 },
            tau_known: 1.0,
            log_tau_prior: Prior::Normal {
                mean: -1.0,
                sd: 0.5,
            },
            sizes: SizeDistribution {
                groups: SizeRange::fixed(8),
                obs: SizeRange::fixed(10),
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct NormalNormal {
    variant: Variant,
    config: NormalNormalConfig,
    layout: ParamLayout,
    id: String,
}

impl NormalNormal {
    pub fn new(variant: Variant, config: NormalNormalConfig) -> Self {
        let mut tau = vec![ParamInfo::new("mu", Transform::Identity)];
        if variant == Variant::B {
            tau.push(ParamInfo::new("tau", Transform::Log));
        }
        let id = match variant {
            Variant::A => "normal-normal-a",
            Variant::B => "normal-normal-b",
        };
        NormalNormal {
            variant,
            config,
            layout: ParamLayout {
                tau,
                omega: vec![],
                local: vec![ParamInfo::new("lambda", Transform::Identity)],
            },
            id: id.to_string(),
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn config(&self) -> &NormalNormalConfig {
        &self.config
    }

    fn group_sd(&self, global: &[f64]) -> f64 {
        match self.variant {
            Variant::A => self.config.tau_known,
            Variant::B => global[1].exp(),
        }
        .max(MIN_SCALE)
    }
}

impl ModelSpec for NormalNormal {
    fn id(&self) -> &str {
        &self.id
    }

    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn data_dims(&self) -> DataDims {
        DataDims {
            obs: 1,
            cov: None,
            sequential: false,
        }
    }

    fn sizes(&self) -> SizeDistribution {
        self.config.sizes
    }

    fn validate(&self) -> Result<()> {
        self.config.mu_prior.validate()?;
        self.config.sizes.validate()?;
        if !(self.config.sigma_obs > 0.0) {
            return Err(Error::config("sigma_obs must be positive"));
        }
        match self.variant {
            Variant::A if !(self.config.tau_known > 0.0) => {
                Err(Error::config("tau_known must be positive"))
            }
            Variant::B => self.config.log_tau_prior.validate(),
            _ => Ok(()),
        }
    }

    fn sample_global(&self, rng: &mut SimRng) -> GlobalParams {
        let mut tau = vec![self.config.mu_prior.sample(rng)];
        if self.variant == Variant::B {
            tau.push(self.config.log_tau_prior.sample(rng));
        }
        GlobalParams { tau, omega: vec![] }
    }

    fn sample_local(&self, global: &GlobalParams, rng: &mut SimRng) -> Vec<f64> {
        let sd = self.group_sd(&global.tau);
        vec![global.tau[0] + sd * rng.sample::<f64, _>(StandardNormal)]
    }

    fn simulate_observations(
        &self,
        local: &[f64],
        _omega: &[f64],
        n_obs: usize,
        _covariates: Option<&Array2<f64>>,
        rng: &mut SimRng,
    ) -> Result<Array2<f64>> {
        let sigma = self.config.sigma_obs;
        Ok(Array2::from_shape_fn((n_obs, 1), |_| {
            local[0] + sigma * rng.sample::<f64, _>(StandardNormal)
        }))
    }

    fn log_prior_global(&self, global: &GlobalParams) -> f64 {
        let mut lp = self.config.mu_prior.log_density(global.tau[0]);
        if self.variant == Variant::B {
            lp += self.config.log_tau_prior.log_density(global.tau[1]);
        }
        lp
    }

    fn log_prior_local(&self, local: &[f64], global: &GlobalParams) -> f64 {
        normal_log_pdf(local[0], global.tau[0], self.group_sd(&global.tau))
    }

    fn log_likelihood(&self, group: &GroupData, local: &[f64], _omega: &[f64]) -> Option<Result<f64>> {
        let sigma = self.config.sigma_obs;
        Some(Ok(group
            .observations
            .column(0)
            .iter()
            .map(|&y| normal_log_pdf(y, local[0], sigma))
            .sum()))
    }

    fn hierarchy(&self, local_index: usize) -> Option<HyperRef> {
        (local_index == 0).then_some(match self.variant {
            Variant::A => HyperRef::FixedSd {
                mean: 0,
                sd: self.config.tau_known,
            },
            Variant::B => HyperRef::Param { mean: 0, log_sd: 1 },
        })
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "id": self.id, "config": self.config })
    }
}

/// Per-group sufficient statistics `(n_j, ybar_j)`.
pub fn group_stats(dataset: &Dataset) -> Vec<(f64, f64)> {
    dataset
        .groups
        .iter()
        .map(|g| {
            let n = g.n_obs() as f64;
            (n, g.observations.column(0).sum() / n)
        })
        .collect()
}

/// Grid resolution along each axis for variant B.
pub const GRID_NODES: usize = 400;

#[derive(Clone, Debug)]
struct Grid {
    mu: Vec<f64>,
    log_tau: Vec<f64>,
    /// Normalized weights, row-major over (mu, log_tau).
    weights: Vec<f64>,
    cumulative: Vec<f64>,
}

/// Exact (variant A) or grid-integrated (variant B) posterior for one
/// dataset.
#[derive(Clone, Debug)]
pub struct NormalNormalOracle {
    model: NormalNormal,
    stats: Vec<(f64, f64)>,
    /// Variant A: Gaussian posterior of mu.
    mu_mean: f64,
    mu_var: f64,
    grid: Option<Grid>,
}

impl NormalNormalOracle {
    pub fn new(model: &NormalNormal, dataset: &Dataset) -> Result<Self> {
        if dataset.groups.iter().any(|g| g.observations.ncols() != 1) {
            return Err(Error::argument("normal-normal data must have one column"));
        }
        Self::from_stats(model, group_stats(dataset), GRID_NODES)
    }

    /// Builds the oracle from group statistics; an empty list gives the prior.
    pub fn from_stats(model: &NormalNormal, stats: Vec<(f64, f64)>, nodes: usize) -> Result<Self> {
        model.validate()?;
        let (m0, s0) = match model.config.mu_prior {
            Prior::Normal { mean, sd } => (mean, sd),
            _ => return Err(Error::config("oracle needs a normal prior on mu")),
        };
        let sigma2 = model.config.sigma_obs.powi(2);
        let mut oracle = NormalNormalOracle {
            model: model.clone(),
            stats,
            mu_mean: m0,
            mu_var: s0 * s0,
            grid: None,
        };
        match model.variant {
            Variant::A => {
                let tau2 = model.config.tau_known.powi(2);
                let mut precision = 1.0 / (s0 * s0);
                let mut weighted = m0 / (s0 * s0);
                for &(n, ybar) in &oracle.stats {
                    let v = tau2 + sigma2 / n;
                    precision += 1.0 / v;
                    weighted += ybar / v;
                }
                oracle.mu_var = 1.0 / precision;
                oracle.mu_mean = weighted / precision;
            }
            Variant::B => {
                let (lm, ls) = match model.config.log_tau_prior {
                    Prior::Normal { mean, sd } => (mean, sd),
                    _ => return Err(Error::config("oracle needs a normal prior on log tau")),
                };
                // Coarse pass over the prior bulk, then a refined pass around
                // the posterior mass.
                let coarse = oracle.build_grid(
                    (m0 - 8.0 * s0, m0 + 8.0 * s0),
                    (lm - 8.0 * ls, lm + 8.0 * ls),
                    nodes,
                    (m0, s0, lm, ls, sigma2),
                )?;
                let (mm, ms) = grid_marginal(&coarse, 0);
                let (tm, ts) = grid_marginal(&coarse, 1);
                let mu_range = (
                    (mm - 10.0 * ms).max(m0 - 8.0 * s0),
                    (mm + 10.0 * ms).min(m0 + 8.0 * s0),
                );
                let tau_range = (
                    (tm - 10.0 * ts).max(lm - 8.0 * ls),
                    (tm + 10.0 * ts).min(lm + 8.0 * ls),
                );
                oracle.grid =
                    Some(oracle.build_grid(mu_range, tau_range, nodes, (m0, s0, lm, ls, sigma2))?);
            }
        }
        Ok(oracle)
    }

    fn build_grid(
        &self,
        mu_range: (f64, f64),
        tau_range: (f64, f64),
        nodes: usize,
        (m0, s0, lm, ls, sigma2): (f64, f64, f64, f64, f64),
    ) -> Result<Grid> {
        let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
            let h = (hi - lo) / nodes as f64;
            (0..nodes).map(|i| lo + (i as f64 + 0.5) * h).collect()
        };
        let mu = axis(mu_range);
        let log_tau = axis(tau_range);
        let mut logw = Vec::with_capacity(nodes * nodes);
        for &m in &mu {
            let lp_mu = normal_log_pdf(m, m0, s0);
            for &lt in &log_tau {
                let tau2 = (2.0 * lt).exp();
                let mut lp = lp_mu + normal_log_pdf(lt, lm, ls);
                for &(n, ybar) in &self.stats {
                    lp += normal_log_pdf(ybar, m, (tau2 + sigma2 / n).sqrt());
                }
                logw.push(lp);
            }
        }
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::numeric("grid posterior has no finite mass"));
        }
        let mut weights: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Ok(Grid {
            mu,
            log_tau,
            weights,
            cumulative,
        })
    }

    /// Sum of grid weights (1 up to rounding for variant B).
    pub fn grid_mass(&self) -> Option<f64> {
        self.grid.as_ref().map(|g| g.weights.iter().sum())
    }

    /// Conditional posterior of `lambda_j` given `(mu, tau)`: (mean, variance).
    fn local_conditional(&self, j: usize, mu: f64, tau: f64) -> (f64, f64) {
        let (n, ybar) = self.stats[j];
        let sigma2 = self.model.config.sigma_obs.powi(2);
        let tau2 = tau * tau;
        let precision = 1.0 / tau2 + n / sigma2;
        ((mu / tau2 + n * ybar / sigma2) / precision, 1.0 / precision)
    }

    /// Posterior (mean, sd) of each global component on the unconstrained scale.
    pub fn global_moments(&self) -> Vec<(f64, f64)> {
        match &self.grid {
            None => vec![(self.mu_mean, self.mu_var.sqrt())],
            Some(g) => vec![grid_marginal(g, 0), grid_marginal(g, 1)],
        }
    }

    /// Posterior (mean, sd) of `lambda_j`.
    pub fn local_moments(&self, j: usize) -> (f64, f64) {
        match &self.grid {
            None => {
                let tau = self.model.config.tau_known;
                let (_, var) = self.local_conditional(j, 0.0, tau);
                let slope = var / (tau * tau);
                let (mean, _) = self.local_conditional(j, self.mu_mean, tau);
                (mean, (var + slope * slope * self.mu_var).sqrt())
            }
            Some(g) => {
                let k = g.log_tau.len();
                let (mut m1, mut m2) = (0.0, 0.0);
                for (idx, w) in g.weights.iter().enumerate() {
                    let (mean, var) =
                        self.local_conditional(j, g.mu[idx / k], g.log_tau[idx % k].exp());
                    m1 += w * mean;
                    m2 += w * (var + mean * mean);
                }
                (m1, (m2 - m1 * m1).max(0.0).sqrt())
            }
        }
    }

    pub fn num_groups(&self) -> usize {
        self.stats.len()
    }

    /// One joint draw `(global, locals)`.
    pub fn draw(&self, rng: &mut SimRng) -> (Vec<f64>, Vec<f64>) {
        let (global, tau) = match &self.grid {
            None => {
                let mu = self.mu_mean + self.mu_var.sqrt() * rng.sample::<f64, _>(StandardNormal);
                (vec![mu], self.model.config.tau_known)
            }
            Some(g) => {
                let u: f64 = rng.random();
                let idx = g.cumulative.partition_point(|&c| c < u).min(g.weights.len() - 1);
                let k = g.log_tau.len();
                let hm = g.mu[1] - g.mu[0];
                let ht = g.log_tau[1] - g.log_tau[0];
                let mu = g.mu[idx / k] + hm * (rng.random::<f64>() - 0.5);
                let lt = g.log_tau[idx % k] + ht * (rng.random::<f64>() - 0.5);
                (vec![mu, lt], lt.exp())
            }
        };
        let locals = (0..self.stats.len())
            .map(|j| {
                let (mean, var) = self.local_conditional(j, global[0], tau);
                mean + var.sqrt() * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        (global, locals)
    }

    pub fn sample(&self, draws: usize, rng: &mut SimRng) -> PosteriorDraws {
        let d_g = self.model.layout.global_dim();
        let j = self.stats.len();
        let mut global = Array2::zeros((draws, d_g));
        let mut local = Array3::zeros((draws, j, 1));
        for s in 0..draws {
            let (g, l) = self.draw(rng);
            for (k, v) in g.into_iter().enumerate() {
                global[[s, k]] = v;
            }
            for (jj, v) in l.into_iter().enumerate() {
                local[[s, jj, 0]] = v;
            }
        }
        PosteriorDraws::new(global, local, self.model.id.clone(), "analytic-oracle")
    }
}

fn grid_marginal(g: &Grid, axis: usize) -> (f64, f64) {
    let k = g.log_tau.len();
    let (mut m1, mut m2) = (0.0, 0.0);
    for (idx, w) in g.weights.iter().enumerate() {
        let x = if axis == 0 { g.mu[idx / k] } else { g.log_tau[idx % k] };
        m1 += w * x;
        m2 += w * x * x;
    }
    (m1, (m2 - m1 * m1).max(0.0).sqrt())
}

/// Posterior sampler backed by [`NormalNormalOracle`].
#[derive(Clone, Debug)]
pub struct AnalyticSampler {
    pub model: NormalNormal,
}

impl PosteriorSampler for AnalyticSampler {
    fn sample(&self, dataset: &Dataset, draws: usize, rng: &mut SimRng) -> Result<PosteriorDraws> {
        let mut out = NormalNormalOracle::new(&self.model, dataset)?.sample(draws, rng);
        out.meta.dataset = crate::posterior::dataset_hash(dataset);
        Ok(out)
    }

    fn name(&self) -> String {
        "analytic-oracle".into()
    }
}
