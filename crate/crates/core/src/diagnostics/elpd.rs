//! Leave-one-group-out expected log predictive density.

use serde::{Deserialize, Serialize};

use super::{mean, variance};
use crate::error::{Error, Result};
use crate::generative::{Dataset, GlobalParams, ModelSpec};
use crate::parallel::Execution;
use crate::posterior::PosteriorSampler;
use crate::rng::{fork_seed, substream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupElpd {
    pub elpd: f64,
    /// Monte-Carlo standard error (delta method).
    pub mc_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElpdTable {
    pub model_a: String,
    pub model_b: String,
    pub a: Vec<GroupElpd>,
    pub b: Vec<GroupElpd>,
    /// Sum over groups of `a_j - b_j`, accumulated in group order.
    pub elpd_diff: f64,
    /// `sd_j(a_j - b_j) * sqrt(J)`.
    pub se_diff: f64,
}

impl ElpdTable {
    pub fn diffs(&self) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(a, b)| a.elpd - b.elpd).collect()
    }

    pub fn total_a(&self) -> f64 {
        self.a.iter().map(|g| g.elpd).sum()
    }

    pub fn total_b(&self) -> f64 {
        self.b.iter().map(|g| g.elpd).sum()
    }
}

/// `log(mean_s exp(ll_s))` computed stably, with its Monte-Carlo error.
pub fn elpd_from_log_lik(ll: &[f64]) -> GroupElpd {
    let m = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return GroupElpd {
            elpd: m,
            mc_se: f64::NAN,
        };
    }
    let w: Vec<f64> = ll.iter().map(|l| (l - m).exp()).collect();
    let mw = mean(&w);
    GroupElpd {
        elpd: m + mw.ln(),
        mc_se: variance(&w).sqrt() / (mw * (w.len() as f64).sqrt()),
    }
}

/// Per-group elpd for one model. For each left-out group `j` (substream `j`
/// of `seed`): draw the posterior without group `j`, then for every draw
/// sample a fresh local parameter from its conditional prior and evaluate
/// the likelihood of the held-out group.
pub fn elpd_logo_single(
    dataset: &Dataset,
    sampler: &dyn PosteriorSampler,
    spec: &dyn ModelSpec,
    draws: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<GroupElpd>> {
    if draws == 0 {
        return Err(Error::argument("number of draws must be positive"));
    }
    if dataset.num_groups() < 2 {
        return Err(Error::argument("leave-one-group-out needs at least two groups"));
    }
    let tau_dim = spec.layout().tau.len();
    exec.try_map(dataset.num_groups(), |j| {
        let mut rng = substream(seed, j as u64);
        let post = sampler.sample_logo(dataset, j, draws, &mut rng)?;
        let group = &dataset.groups[j];
        let mut ll = Vec::with_capacity(draws);
        for row in post.tau_omega.rows() {
            let global = GlobalParams::from_concat(&row.to_vec(), tau_dim);
            let local = spec.sample_local(&global, &mut rng);
            let v = spec.log_likelihood(group, &local, &global.omega).ok_or_else(|| {
                Error::config(format!("model {} has no pointwise likelihood", spec.id()))
            })??;
            ll.push(v);
        }
        Ok(elpd_from_log_lik(&ll))
    })
}

/// Compares two models by leave-one-group-out elpd. Both use the same seed
/// forked from `rng`, so identical inputs give identical tables.
pub fn elpd_logo(
    dataset: &Dataset,
    a: (&dyn PosteriorSampler, &dyn ModelSpec),
    b: (&dyn PosteriorSampler, &dyn ModelSpec),
    draws: usize,
    rng: &mut crate::rng::SimRng,
    exec: Execution,
) -> Result<ElpdTable> {
    let seed = fork_seed(rng);
    let ea = elpd_logo_single(dataset, a.0, a.1, draws, seed, exec)?;
    let eb = elpd_logo_single(dataset, b.0, b.1, draws, seed, exec)?;
    let diffs: Vec<f64> = ea.iter().zip(&eb).map(|(x, y)| x.elpd - y.elpd).collect();
    let elpd_diff = diffs.iter().sum();
    let se_diff = variance(&diffs).sqrt() * (diffs.len() as f64).sqrt();
    Ok(ElpdTable {
        model_a: a.1.id().into(),
        model_b: b.1.id().into(),
        a: ea,
        b: eb,
        elpd_diff,
        se_diff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generative::simulate_dataset;
    use crate::posterior::PriorSampler;
    use crate::rng::seeded;
    use crate::zoo::ModelConfig;

    #[test]
    fn single_draw_is_its_log_likelihood() {
        let e = elpd_from_log_lik(&[0.5f64.ln()]);
        assert!((e.elpd - (-0.6931471805599453)).abs() < 1e-15);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let e = elpd_from_log_lik(&[-1000.0, -1000.0 + 2f64.ln()]);
        assert!((e.elpd - (-1000.0 + 1.5f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn identical_models_have_zero_difference() {
        let cfg = ModelConfig::from_id("normal-normal-b").unwrap();
        let spec = cfg.build().unwrap();
        let sampler = PriorSampler { spec: cfg.build().unwrap() };
        let item = simulate_dataset(spec.as_ref(), 5, 10, &mut seeded(1)).unwrap();
        let t = elpd_logo(
            &item.dataset,
            (&sampler, spec.as_ref()),
            (&sampler, spec.as_ref()),
            50,
            &mut seeded(2),
            Execution::Parallel,
        )
        .unwrap();
        assert_eq!(t.elpd_diff, 0.0);
        assert_eq!(t.se_diff, 0.0);
        let recomputed: f64 = t.diffs().iter().sum();
        assert_eq!(recomputed.to_bits(), t.elpd_diff.to_bits());
    }

    /// Delegates to a zoo model but hides its likelihood.
    #[derive(Debug)]
    struct NoLikelihood(Box<dyn ModelSpec>);

    impl ModelSpec for NoLikelihood {
        fn id(&self) -> &str {
            self.0.id()
        }
        fn layout(&self) -> &crate::generative::ParamLayout {
            self.0.layout()
        }
        fn data_dims(&self) -> crate::generative::DataDims {
            self.0.data_dims()
        }
        fn sizes(&self) -> crate::generative::SizeDistribution {
            self.0.sizes()
        }
        fn validate(&self) -> Result<()> {
            self.0.validate()
        }
        fn sample_global(&self, rng: &mut crate::rng::SimRng) -> GlobalParams {
            self.0.sample_global(rng)
        }
        fn sample_local(&self, g: &GlobalParams, rng: &mut crate::rng::SimRng) -> Vec<f64> {
            self.0.sample_local(g, rng)
        }
        fn simulate_observations(
            &self,
            local: &[f64],
            omega: &[f64],
            n: usize,
            cov: Option<&ndarray::Array2<f64>>,
            rng: &mut crate::rng::SimRng,
        ) -> Result<ndarray::Array2<f64>> {
            self.0.simulate_observations(local, omega, n, cov, rng)
        }
        fn log_prior_global(&self, g: &GlobalParams) -> f64 {
            self.0.log_prior_global(g)
        }
        fn log_prior_local(&self, l: &[f64], g: &GlobalParams) -> f64 {
            self.0.log_prior_local(l, g)
        }
        fn describe(&self) -> serde_json::Value {
            self.0.describe()
        }
    }

    #[test]
    fn missing_likelihood_is_a_config_error() {
        let cfg = ModelConfig::from_id("normal-normal-a").unwrap();
        let spec = NoLikelihood(cfg.build().unwrap());
        let sampler = PriorSampler { spec: cfg.build().unwrap() };
        let item = simulate_dataset(&spec, 3, 10, &mut seeded(1)).unwrap();
        let r = elpd_logo_single(&item.dataset, &sampler, &spec, 10, 0, Execution::Sequential);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn needs_two_groups() {
        let cfg = ModelConfig::from_id("normal-normal-a").unwrap();
        let spec = cfg.build().unwrap();
        let sampler = PriorSampler { spec: cfg.build().unwrap() };
        let item = simulate_dataset(spec.as_ref(), 1, 10, &mut seeded(1)).unwrap();
        let r = elpd_logo_single(&item.dataset, &sampler, spec.as_ref(), 10, 0, Execution::Sequential);
        assert!(matches!(r, Err(Error::Argument(_))));
    }
}
