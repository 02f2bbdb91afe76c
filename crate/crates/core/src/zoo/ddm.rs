//! Four-parameter diffusion decision model with a hierarchy over subjects.
//!
//! Evidence starts at `beta * alpha` and diffuses with drift `nu` and unit
//! diffusion coefficient until it leaves `(0, alpha)`. The response time is
//! `t0` plus the first-passage time; choice is 1 for the upper boundary.
//! `alpha` and `t0` are hierarchical on the log scale, `nu` on the natural
//! scale. The shared variant has one `beta` for all subjects; the
//! hierarchical variant draws `beta_j ~ BetaProportion(mu_beta, xi)`.
//!
//! Simulation uses Euler-Maruyama steps with a Brownian-bridge crossing
//! check between grid points, which removes most of the discrete-monitoring
//! bias. Likelihoods use the Navarro-Fuss small/large-time series.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::generative::{
    normal_log_pdf, sigmoid, DataDims, GlobalParams, GroupData, HyperRef, ModelSpec, ParamInfo,
    ParamLayout, Prior, SizeDistribution, SizeRange, Transform, MIN_SCALE,
};
use crate::rng::SimRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdmConfig {
    pub mu_nu: Prior,
    /// Mean of `log alpha_j`.
    pub mu_log_alpha: Prior,
    /// Mean of `log t0_j`.
    pub mu_log_t0: Prior,
    /// Priors on the log of the three hierarchical standard deviations.
    pub log_sd_nu: Prior,
    pub log_sd_alpha: Prior,
    pub log_sd_t0: Prior,
    /// Shared starting point, or the mean of the subject starting points.
    pub beta: Prior,
    /// Concentration of the subject starting points (hierarchical variant).
    pub xi: Prior,
    /// Euler step in seconds.
    pub dt: f64,
    /// Trials slower than this are resampled.
    pub rt_cap: f64,
    pub sizes: SizeDistribution,
}

impl Default for DdmConfig {
    fn default() -> Self {
        let n = |mean, sd| Prior::Normal { mean, sd };
        DdmConfig {
            mu_nu: n(0.5, 0.3),
            mu_log_alpha: n(0.0, 0.05),
            mu_log_t0: n(-1.0, 0.3),
            log_sd_nu: n(-1.0, 1.0),
            log_sd_alpha: n(-3.0, 1.0),
            log_sd_t0: n(-1.0, 0.3),
            beta: Prior::Beta { a: 50.0, b: 50.0 },
            xi: Prior::Gamma {
                shape: 5.0,
                rate: 3.0,
            },
            dt: 1e-3,
            rt_cap: 10.0,
            sizes: SizeDistribution {
                groups: SizeRange::new(10, 30),
                obs: SizeRange::new(1, 100),
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct Ddm {
    hierarchical_beta: bool,
    config: DdmConfig,
    layout: ParamLayout,
}

impl Ddm {
    pub fn new(hierarchical_beta: bool, config: DdmConfig) -> Self {
        let mut tau = vec![
            ParamInfo::new("mu_nu", Transform::Identity),
            ParamInfo::new("mu_log_alpha", Transform::Identity),
            ParamInfo::new("mu_log_t0", Transform::Identity),
            ParamInfo::new("sigma_nu", Transform::Log),
            ParamInfo::new("sigma_log_alpha", Transform::Log),
            ParamInfo::new("sigma_log_t0", Transform::Log),
        ];
        let mut omega = vec![];
        let mut local = vec![
            ParamInfo::new("nu", Transform::Identity),
            ParamInfo::new("alpha", Transform::Log),
            ParamInfo::new("t0", Transform::Log),
        ];
        if hierarchical_beta {
            tau.push(ParamInfo::new("mu_beta", Transform::Logit));
            tau.push(ParamInfo::new("xi", Transform::Log));
            local.push(ParamInfo::new("beta", Transform::Logit));
        } else {
            omega.push(ParamInfo::new("beta", Transform::Logit));
        }
        Ddm {
            hierarchical_beta,
            config,
            layout: ParamLayout { tau, omega, local },
        }
    }

    pub fn hierarchical_beta(&self) -> bool {
        self.hierarchical_beta
    }

    pub fn config(&self) -> &DdmConfig {
        &self.config
    }

    /// `(nu, alpha, t0, beta)` on the natural scale.
    fn natural(&self, local: &[f64], omega: &[f64]) -> (f64, f64, f64, f64) {
        let beta = if self.hierarchical_beta {
            local[3]
        } else {
            omega[0]
        };
        (local[0], local[1].exp(), local[2].exp(), sigmoid(beta))
    }

    fn beta_shapes(global: &GlobalParams) -> (f64, f64) {
        let mu = sigmoid(global.tau[6]);
        let xi = global.tau[7].exp();
        ((mu * xi).max(MIN_SCALE), ((1.0 - mu) * xi).max(MIN_SCALE))
    }
}

/// First passage of a unit-diffusion process started at `beta * alpha`.
/// Returns `(time, upper)` or `None` if `cap` is reached. `noise` yields
/// standard normals for the Euler increments and `uniform` yields U(0,1)
/// for the bridge crossing test.
pub fn first_passage(
    nu: f64,
    alpha: f64,
    beta: f64,
    dt: f64,
    cap: f64,
    mut noise: impl FnMut() -> f64,
    mut uniform: impl FnMut() -> f64,
) -> Option<(f64, bool)> {
    let sqrt_dt = dt.sqrt();
    let mut x = beta * alpha;
    let mut t = 0.0;
    let max_steps = (cap / dt).ceil() as u64;
    for _ in 0..max_steps {
        let next = x + nu * dt + sqrt_dt * noise();
        t += dt;
        if next >= alpha {
            return Some((t, true));
        }
        if next <= 0.0 {
            return Some((t, false));
        }
        // Probability that the bridge between x and next touched a boundary.
        let p_up = (-2.0 * (alpha - x) * (alpha - next) / dt).exp();
        let p_lo = (-2.0 * x * next / dt).exp();
        if p_up > 1e-12 || p_lo > 1e-12 {
            let u = uniform();
            if u < p_up {
                return Some((t, true));
            }
            if u < p_up + p_lo * (1.0 - p_up) {
                return Some((t, false));
            }
        }
        x = next;
    }
    None
}

/// Probability of absorbing at the upper boundary.
pub fn prob_upper(nu: f64, alpha: f64, beta: f64) -> f64 {
    if nu.abs() < 1e-12 {
        return beta;
    }
    let num = -(-2.0 * nu * beta * alpha).exp_m1();
    let den = -(-2.0 * nu * alpha).exp_m1();
    num / den
}

/// Relative truncation error for the first-passage series.
const SERIES_EPS: f64 = 1e-12;
const MAX_TERMS: f64 = 10_000.0;

/// Log density of absorbing at the lower boundary at time `t` for drift `nu`,
/// separation `alpha` and relative start `w`.
pub fn log_density_lower(t: f64, nu: f64, alpha: f64, w: f64) -> Result<f64> {
    if t <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let u = t / (alpha * alpha);
    let kl = if PI * u * SERIES_EPS < 1.0 {
        (-2.0 * (PI * u * SERIES_EPS).ln() / (PI * PI * u))
            .sqrt()
            .max(1.0 / (PI * u.sqrt()))
    } else {
        1.0 / (PI * u.sqrt())
    };
    let arg = 2.0 * (2.0 * PI * u).sqrt() * SERIES_EPS;
    let ks = if arg < 1.0 {
        (2.0 + (-2.0 * u * arg.ln()).sqrt()).max(u.sqrt() + 1.0)
    } else {
        2.0
    };
    if !kl.is_finite() || !ks.is_finite() || kl.min(ks) > MAX_TERMS {
        return Err(Error::numeric(format!(
            "first-passage series does not converge at t={t}, alpha={alpha}"
        )));
    }
    let p = if ks < kl {
        let k = ks.ceil() as i64;
        let lo = -((k - 1) / 2);
        let hi = (k - 1 + 1) / 2;
        let s: f64 = (lo..=hi)
            .map(|k| {
                let r = w + 2.0 * k as f64;
                r * (-r * r / (2.0 * u)).exp()
            })
            .sum();
        s / (2.0 * PI * u.powi(3)).sqrt()
    } else {
        let k = kl.ceil() as i64;
        PI * (1..=k)
            .map(|k| {
                let k = k as f64;
                k * (-k * k * PI * PI * u / 2.0).exp() * (k * PI * w).sin()
            })
            .sum::<f64>()
    };
    if p.is_nan() {
        return Err(Error::numeric("first-passage series produced NaN"));
    }
    if p <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(p.ln() - 2.0 * alpha.ln() - nu * alpha * w - nu * nu * t / 2.0)
}

/// Log density of one `(rt, choice)` observation.
pub fn log_density(rt: f64, upper: bool, nu: f64, alpha: f64, t0: f64, beta: f64) -> Result<f64> {
    if upper {
        log_density_lower(rt - t0, -nu, alpha, 1.0 - beta)
    } else {
        log_density_lower(rt - t0, nu, alpha, beta)
    }
}

impl ModelSpec for Ddm {
    fn id(&self) -> &str {
        if self.hierarchical_beta {
            "ddm-hier"
        } else {
            "ddm-shared"
        }
    }

    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn data_dims(&self) -> DataDims {
        DataDims {
            obs: 2,
            cov: None,
            sequential: false,
        }
    }

    fn sizes(&self) -> SizeDistribution {
        self.config.sizes
    }

    fn validate(&self) -> Result<()> {
        let c = &self.config;
        for p in [
            &c.mu_nu,
            &c.mu_log_alpha,
            &c.mu_log_t0,
            &c.log_sd_nu,
            &c.log_sd_alpha,
            &c.log_sd_t0,
            &c.beta,
            &c.xi,
        ] {
            p.validate()?;
        }
        if c.beta.transform() != Transform::Logit {
            return Err(Error::config("beta prior must live on (0, 1)"));
        }
        if c.xi.transform() != Transform::Log {
            return Err(Error::config("xi prior must be positive"));
        }
        if !(c.dt > 0.0 && c.rt_cap > c.dt) {
            return Err(Error::config("need 0 < dt < rt_cap"));
        }
        c.sizes.validate()
    }

    fn sample_global(&self, rng: &mut SimRng) -> GlobalParams {
        let c = &self.config;
        let mut tau: Vec<f64> = [
            &c.mu_nu,
            &c.mu_log_alpha,
            &c.mu_log_t0,
            &c.log_sd_nu,
            &c.log_sd_alpha,
            &c.log_sd_t0,
        ]
        .iter()
        .map(|p| p.sample(rng))
        .collect();
        let beta = c.beta.sample_unconstrained(rng);
        if self.hierarchical_beta {
            tau.push(beta);
            tau.push(c.xi.sample_unconstrained(rng));
            GlobalParams { tau, omega: vec![] }
        } else {
            GlobalParams {
                tau,
                omega: vec![beta],
            }
        }
    }

    fn sample_local(&self, global: &GlobalParams, rng: &mut SimRng) -> Vec<f64> {
        let mut local: Vec<f64> = (0..3)
            .map(|k| {
                let sd = global.tau[3 + k].exp().max(MIN_SCALE);
                global.tau[k] + sd * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        if self.hierarchical_beta {
            let (a, b) = Self::beta_shapes(global);
            local.push(Prior::Beta { a, b }.sample_unconstrained(rng));
        }
        local
    }

    fn simulate_observations(
        &self,
        local: &[f64],
        omega: &[f64],
        n_obs: usize,
        _covariates: Option<&Array2<f64>>,
        rng: &mut SimRng,
    ) -> Result<Array2<f64>> {
        let (nu, alpha, t0, beta) = self.natural(local, omega);
        let mut out = Array2::zeros((n_obs, 2));
        for i in 0..n_obs {
            let mut hit = None;
            for _ in 0..=self.max_retries() {
                let (noise, unif) = split(rng);
                hit = first_passage(nu, alpha, beta, self.config.dt, self.config.rt_cap, noise, unif);
                if hit.is_some() {
                    break;
                }
            }
            let Some((t, upper)) = hit else {
                return Err(Error::Simulation {
                    reason: format!("trial exceeded the {} s cap", self.config.rt_cap),
                    params: vec![nu, alpha, t0, beta],
                });
            };
            out[[i, 0]] = t0 + t;
            out[[i, 1]] = if upper { 1.0 } else { 0.0 };
        }
        Ok(out)
    }

    fn log_prior_global(&self, global: &GlobalParams) -> f64 {
        let c = &self.config;
        let mut lp: f64 = [
            &c.mu_nu,
            &c.mu_log_alpha,
            &c.mu_log_t0,
            &c.log_sd_nu,
            &c.log_sd_alpha,
            &c.log_sd_t0,
        ]
        .iter()
        .zip(&global.tau)
        .map(|(p, &v)| p.log_density(v))
        .sum();
        if self.hierarchical_beta {
            lp += c.beta.log_density_unconstrained(global.tau[6]);
            lp += c.xi.log_density_unconstrained(global.tau[7]);
        } else {
            lp += c.beta.log_density_unconstrained(global.omega[0]);
        }
        lp
    }

    fn log_prior_local(&self, local: &[f64], global: &GlobalParams) -> f64 {
        let mut lp: f64 = (0..3)
            .map(|k| normal_log_pdf(local[k], global.tau[k], global.tau[3 + k].exp()))
            .sum();
        if self.hierarchical_beta {
            let (a, b) = Self::beta_shapes(global);
            lp += Prior::Beta { a, b }.log_density_unconstrained(local[3]);
        }
        lp
    }

    fn log_likelihood(&self, group: &GroupData, local: &[f64], omega: &[f64]) -> Option<Result<f64>> {
        let (nu, alpha, t0, beta) = self.natural(local, omega);
        let mut ll = 0.0;
        for row in group.observations.rows() {
            match log_density(row[0], row[1] > 0.5, nu, alpha, t0, beta) {
                Ok(v) => ll += v,
                Err(e) => return Some(Err(e)),
            }
        }
        Some(Ok(ll))
    }

    fn hierarchy(&self, local_index: usize) -> Option<HyperRef> {
        (local_index < 3).then_some(HyperRef::Param {
            mean: local_index,
            log_sd: 3 + local_index,
        })
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "id": self.id(), "config": self.config })
    }
}

/// Two closures drawing normals and uniforms from one generator.
fn split(rng: &mut SimRng) -> (impl FnMut() -> f64 + '_, impl FnMut() -> f64 + '_) {
    let cell = std::cell::RefCell::new(rng);
    let cell = std::rc::Rc::new(cell);
    let c2 = cell.clone();
    (
        move || cell.borrow_mut().sample::<f64, _>(StandardNormal),
        move || c2.borrow_mut().random::<f64>(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generative::sample_global_prior;
    use crate::rng::seeded;

    fn simulate_fraction(nu: f64, alpha: f64, beta: f64, dt: f64, n: usize, seed: u64) -> f64 {
        let mut rng = seeded(seed);
        let mut up = 0;
        for _ in 0..n {
            let (noise, unif) = split(&mut rng);
            if first_passage(nu, alpha, beta, dt, 20.0, noise, unif).unwrap().1 {
                up += 1;
            }
        }
        up as f64 / n as f64
    }

    #[test]
    fn prior_mean_of_drift_mean() {
        let model = Ddm::new(false, DdmConfig::default());
        let mut rng = seeded(7);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let g = sample_global_prior(&model, &mut rng).unwrap();
            assert_eq!((g.tau.len(), g.omega.len()), (6, 1));
            sum += g.tau[0];
        }
        let se = 0.3 / (n as f64).sqrt();
        assert!((sum / n as f64 - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn fast_drift_rts_exceed_t0_and_choices_match_reference() {
        let model = Ddm::new(false, DdmConfig::default());
        let local = [5.0, 2f64.ln(), 0.3f64.ln()];
        let omega = [0.0];
        let mut rng = seeded(1);
        let n = 10_000;
        let y = model.simulate_observations(&local, &omega, n, None, &mut rng).unwrap();
        assert!(y.column(0).iter().all(|&rt| rt >= 0.3));
        let frac = y.column(1).sum() / n as f64;
        let reference = simulate_fraction(5.0, 2.0, 0.5, 1e-5, n, 99);
        let p = prob_upper(5.0, 2.0, 0.5);
        let se = (p * (1.0 - p) / n as f64).sqrt().max(1.0 / n as f64);
        assert!((frac - reference).abs() <= 3.0 * se * 2f64.sqrt() + 1.0 / n as f64);
    }

    #[test]
    fn choice_proportions_match_hitting_probability() {
        for &(nu, alpha, beta) in &[(0.5, 1.0, 0.5), (-0.8, 1.5, 0.4), (0.0, 1.0, 0.3), (1.2, 0.8, 0.6)] {
            let n = 20_000;
            let frac = simulate_fraction(nu, alpha, beta, 1e-3, n, 5);
            let p = prob_upper(nu, alpha, beta);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((frac - p).abs() < 3.0 * se, "{nu} {alpha} {beta}: {frac} vs {p}");
        }
    }

    /// Lazily extended stream of draws indexed by position.
    struct Stream {
        rng: SimRng,
        normal: bool,
        buf: Vec<f64>,
    }

    impl Stream {
        fn get(&mut self, i: usize) -> f64 {
            while self.buf.len() <= i {
                let v = if self.normal {
                    self.rng.sample::<f64, _>(StandardNormal)
                } else {
                    self.rng.random::<f64>()
                };
                self.buf.push(v);
            }
            self.buf[i]
        }
    }

    #[test]
    fn step_halving_is_converged() {
        // Coarse increments are sums of pairs of fine increments, so both
        // discretizations follow the same Brownian path.
        let (nu, alpha, beta) = (0.7, 1.0, 0.45);
        let n = 20_000;
        let dt = 1e-3;
        let (mut fine_up, mut coarse_up) = (0usize, 0usize);
        for trial in 0..n {
            let mut path = Stream { rng: crate::rng::substream(21, 2 * trial as u64), normal: true, buf: vec![] };
            let mut bridge = Stream { rng: crate::rng::substream(21, 2 * trial as u64 + 1), normal: false, buf: vec![] };
            let f = {
                let (path, bridge) = (std::cell::RefCell::new(&mut path), std::cell::RefCell::new(&mut bridge));
                let (mut i, mut b) = (0, 0);
                first_passage(
                    nu, alpha, beta, dt / 2.0, 20.0,
                    || { i += 1; path.borrow_mut().get(i - 1) },
                    || { b += 1; bridge.borrow_mut().get(b - 1) },
                )
            };
            let c = {
                let (mut i, mut b) = (0, 0);
                let bridge = std::cell::RefCell::new(&mut bridge);
                first_passage(
                    nu, alpha, beta, dt, 20.0,
                    || { i += 2; (path.get(i - 2) + path.get(i - 1)) / 2f64.sqrt() },
                    || { b += 1; bridge.borrow_mut().get(b - 1) },
                )
            };
            fine_up += f.unwrap().1 as usize;
            coarse_up += c.unwrap().1 as usize;
        }
        let p = fine_up as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((fine_up as f64 - coarse_up as f64).abs() / n as f64 <= se);
    }

    #[test]
    fn density_integrates_to_boundary_probabilities() {
        for &(nu, alpha, beta) in &[(0.5, 1.0, 0.5), (-1.0, 1.4, 0.3), (2.0, 0.7, 0.6)] {
            let (mut up, mut lo) = (0.0, 0.0);
            let h = 1e-4;
            for k in 1..200_000 {
                let t = k as f64 * h;
                up += log_density(t, true, nu, alpha, 0.0, beta).unwrap().exp() * h;
                lo += log_density(t, false, nu, alpha, 0.0, beta).unwrap().exp() * h;
            }
            let p = prob_upper(nu, alpha, beta);
            assert!((up - p).abs() < 1e-4, "{up} vs {p}");
            assert!((lo - (1.0 - p)).abs() < 1e-4);
        }
    }

    #[test]
    fn density_below_t0_is_zero() {
        assert_eq!(log_density(0.2, true, 1.0, 1.0, 0.3, 0.5).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn hierarchical_variant_layout() {
        let model = Ddm::new(true, DdmConfig::default());
        let g = sample_global_prior(&model, &mut seeded(2)).unwrap();
        assert_eq!((g.tau.len(), g.omega.len()), (8, 0));
        let l = model.sample_local(&g, &mut seeded(3));
        assert_eq!(l.len(), 4);
        assert!(model.log_prior_local(&l, &g).is_finite());
        assert!(model.log_prior_global(&g).is_finite());
        let sizes = model.sizes();
        assert_eq!((sizes.obs.min, sizes.obs.max), (1, 100));
    }
}
