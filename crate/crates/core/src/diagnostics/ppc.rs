//! Posterior predictive replicates and one-step-ahead intervals.

use serde::{Deserialize, Serialize};

use super::{quantile, sorted};
use crate::error::{Error, Result};
use crate::generative::{simulate_group, Dataset, ModelSpec};
use crate::posterior::PosteriorDraws;
use crate::rng::SimRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneStepInterval {
    pub group: usize,
    pub t: usize,
    pub lower: f64,
    pub median: f64,
    pub upper: f64,
    pub observed: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveCheck {
    /// One replicate dataset per posterior draw, shaped like the observed
    /// data and reusing its covariates.
    pub replicates: Vec<Dataset>,
    /// Central intervals of the one-step-ahead predictive at each `t >= 1`,
    /// given the observed previous value. Empty for non-sequential models.
    pub one_step: Vec<OneStepInterval>,
}

impl PredictiveCheck {
    /// Fraction of observed points inside their one-step interval.
    pub fn one_step_coverage(&self) -> Option<f64> {
        if self.one_step.is_empty() {
            return None;
        }
        let hits = self
            .one_step
            .iter()
            .filter(|i| i.lower <= i.observed && i.observed <= i.upper)
            .count();
        Some(hits as f64 / self.one_step.len() as f64)
    }
}

pub fn posterior_predictive(
    dataset: &Dataset,
    draws: &PosteriorDraws,
    spec: &dyn ModelSpec,
    level: f64,
    rng: &mut SimRng,
) -> Result<PredictiveCheck> {
    let (s_n, j_n, d_l) = draws.lambda.dim();
    if j_n != dataset.num_groups() || d_l != spec.layout().local_dim() {
        return Err(Error::argument(format!(
            "draws cover {j_n} groups with {d_l} local params; dataset has {} groups",
            dataset.num_groups()
        )));
    }
    let tau_dim = spec.layout().tau.len();
    let local = |s: usize, j: usize| draws.lambda.slice(ndarray::s![s, j, ..]).to_vec();
    let omega = |s: usize| draws.tau_omega.row(s).to_vec()[tau_dim..].to_vec();

    let mut replicates = Vec::with_capacity(s_n);
    for s in 0..s_n {
        let om = omega(s);
        let groups = dataset
            .groups
            .iter()
            .enumerate()
            .map(|(j, g)| simulate_group(&local(s, j), &om, g.n_obs(), g.covariates.clone(), spec, rng))
            .collect::<Result<Vec<_>>>()?;
        replicates.push(Dataset { groups });
    }

    let a = (1.0 - level) / 2.0;
    let mut one_step = Vec::new();
    'groups: for (j, g) in dataset.groups.iter().enumerate() {
        for t in 1..g.n_obs() {
            let mut preds = Vec::with_capacity(s_n);
            for s in 0..s_n {
                match spec.one_step_ahead(g, t, &local(s, j), &omega(s), rng) {
                    Some(v) => preds.push(v),
                    None => break 'groups,
                }
            }
            let p = sorted(&preds);
            one_step.push(OneStepInterval {
                group: j,
                t,
                lower: quantile(&p, a),
                median: quantile(&p, 0.5),
                upper: quantile(&p, 1.0 - a),
                observed: g.observations[[t, 0]],
            });
        }
    }
    Ok(PredictiveCheck { replicates, one_step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generative::{simulate_dataset, GlobalParams};
    use crate::posterior::PriorSampler;
    use crate::posterior::PosteriorSampler;
    use crate::rng::seeded;
    use crate::zoo::ModelConfig;
    use ndarray::{Array2, Array3};

    #[test]
    fn replicates_match_observed_shapes() {
        let cfg = ModelConfig::from_id("air-traffic").unwrap();
        let spec = cfg.build().unwrap();
        let item = simulate_dataset(spec.as_ref(), 4, 12, &mut seeded(1)).unwrap();
        let sampler = PriorSampler { spec: cfg.build().unwrap() };
        let draws = sampler.sample(&item.dataset, 20, &mut seeded(2)).unwrap();
        let ppc = posterior_predictive(&item.dataset, &draws, spec.as_ref(), 0.95, &mut seeded(3)).unwrap();
        assert_eq!(ppc.replicates.len(), 20);
        for rep in &ppc.replicates {
            for (a, b) in rep.groups.iter().zip(&item.dataset.groups) {
                assert_eq!(a.observations.dim(), b.observations.dim());
                assert_eq!(a.covariates, b.covariates);
            }
        }
        assert_eq!(ppc.one_step.len(), 4 * 11);
    }

    #[test]
    fn noiseless_one_step_is_the_ar_mean() {
        let cfg = ModelConfig::from_id("air-traffic").unwrap();
        let spec = cfg.build().unwrap();
        let item = simulate_dataset(spec.as_ref(), 1, 6, &mut seeded(4)).unwrap();
        let local = [0.2, 0.6, -0.3, 0.1, -50.0];
        let draws = PosteriorDraws::new(
            Array2::zeros((3, spec.layout().global_dim())),
            Array3::from_shape_fn((3, 1, 5), |(_, _, k)| local[k]),
            "air-traffic".into(),
            "test",
        );
        let ppc = posterior_predictive(&item.dataset, &draws, spec.as_ref(), 0.95, &mut seeded(5)).unwrap();
        let g = &item.dataset.groups[0];
        let cov = g.covariates.as_ref().unwrap();
        for i in &ppc.one_step {
            let t = i.t;
            let mean = local[0] + local[1] * g.observations[[t - 1, 0]] + local[2] * cov[[t - 1, 0]] + local[3] * cov[[t - 1, 1]];
            assert!((i.median - mean).abs() < 1e-12 && (i.upper - i.lower).abs() < 1e-12);
        }
    }

    #[test]
    fn true_model_intervals_are_calibrated() {
        // Each held-out point is simulated from the same parameters the
        // predictive uses, so 95% intervals cover about 95% of points.
        let cfg = ModelConfig::from_id("air-traffic").unwrap();
        let spec = cfg.build().unwrap();
        let mut rng = seeded(6);
        let mut hits = 0usize;
        let mut total = 0usize;
        for _ in 0..40 {
            let g = spec.sample_global(&mut rng);
            let item = simulate_dataset(spec.as_ref(), 3, 30, &mut rng).unwrap();
            let lam: Vec<Vec<f64>> = (0..3).map(|_| spec.sample_local(&g, &mut rng)).collect();
            let data = Dataset {
                groups: item
                    .dataset
                    .groups
                    .iter()
                    .zip(&lam)
                    .map(|(grp, l)| simulate_group(l, &g.omega, 30, grp.covariates.clone(), spec.as_ref(), &mut rng).unwrap())
                    .collect(),
            };
            let draws = PosteriorDraws::new(
                Array2::from_shape_fn((400, g.dim()), |(_, k)| GlobalParams::concat(&g)[k]),
                Array3::from_shape_fn((400, 3, 5), |(_, j, k)| lam[j][k]),
                "air-traffic".into(),
                "test",
            );
            let ppc = posterior_predictive(&data, &draws, spec.as_ref(), 0.95, &mut rng).unwrap();
            let c = ppc.one_step_coverage().unwrap();
            hits += (c * ppc.one_step.len() as f64).round() as usize;
            total += ppc.one_step.len();
        }
        let cov = hits as f64 / total as f64;
        let se = (0.95 * 0.05 / total as f64).sqrt();
        assert!((cov - 0.95).abs() < 3.0 * se + 0.003, "{cov}");
    }

    #[test]
    fn non_sequential_models_have_no_one_step() {
        let cfg = ModelConfig::from_id("normal-normal-a").unwrap();
        let spec = cfg.build().unwrap();
        let item = simulate_dataset(spec.as_ref(), 3, 10, &mut seeded(1)).unwrap();
        let sampler = PriorSampler { spec: cfg.build().unwrap() };
        let draws = sampler.sample(&item.dataset, 5, &mut seeded(2)).unwrap();
        let ppc = posterior_predictive(&item.dataset, &draws, spec.as_ref(), 0.95, &mut seeded(3)).unwrap();
        assert!(ppc.one_step.is_empty());
        assert!(ppc.one_step_coverage().is_none());
    }
}
