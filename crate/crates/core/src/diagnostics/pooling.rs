//! Pooling factors: how strongly each group's parameter is pulled toward
//! the population mean.

use super::{mean, variance};
use crate::error::{Error, Result};
use crate::generative::{HyperRef, ModelSpec};
use crate::posterior::PosteriorDraws;

/// `kappa_j = Var(eta_j - mu) / E[sigma^2]` over the posterior draws, for
/// local parameter `local_index` with hierarchical mean `mu` and standard
/// deviation `sigma` (all on the unconstrained scale). Values near 0 mean
/// complete pooling; values near 1 mean none.
pub fn pooling_factor(
    draws: &PosteriorDraws,
    spec: &dyn ModelSpec,
    local_index: usize,
) -> Result<Vec<f64>> {
    let hyper = spec.hierarchy(local_index).ok_or_else(|| {
        Error::config(format!(
            "model {} declares no hierarchical mean and sd for local parameter {local_index}",
            spec.id()
        ))
    })?;
    let (s_n, j_n, d_l) = draws.lambda.dim();
    if local_index >= d_l || s_n < 2 {
        return Err(Error::argument("pooling factor needs a valid index and at least two draws"));
    }
    let (mean_idx, sigma2): (usize, Vec<f64>) = match hyper {
        HyperRef::Param { mean, log_sd } => (
            mean,
            (0..s_n)
                .map(|s| (2.0 * draws.tau_omega[[s, log_sd]]).exp())
                .collect(),
        ),
        HyperRef::FixedSd { mean, sd } => (mean, vec![sd * sd; s_n]),
    };
    let denom = mean(&sigma2);
    Ok((0..j_n)
        .map(|j| {
            let diff: Vec<f64> = (0..s_n)
                .map(|s| draws.lambda[[s, j, local_index]] - draws.tau_omega[[s, mean_idx]])
                .collect();
            variance(&diff) / denom
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::zoo::ModelConfig;
    use ndarray::{Array2, Array3};
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn complete_pooling_gives_zero() {
        let spec = ModelConfig::from_id("normal-normal-b").unwrap().build().unwrap();
        let mut rng = seeded(1);
        let s_n = 50;
        let tau = Array2::from_shape_fn((s_n, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let lambda = Array3::from_shape_fn((s_n, 3, 1), |(s, _, _)| tau[[s, 0]]);
        let d = PosteriorDraws::new(tau, lambda, "normal-normal-b".into(), "test");
        assert!(pooling_factor(&d, spec.as_ref(), 0).unwrap().iter().all(|&k| k == 0.0));
    }

    #[test]
    fn matching_variance_gives_one() {
        let spec = ModelConfig::from_id("normal-normal-b").unwrap().build().unwrap();
        let mut rng = seeded(2);
        let s_n = 200;
        // Constant sigma = e^0.3; differences rescaled to sample variance e^0.6.
        let mut tau = Array2::zeros((s_n, 2));
        let raw: Vec<f64> = (0..s_n).map(|_| rng.sample(StandardNormal)).collect();
        let sd = variance(&raw).sqrt();
        let mut lambda = Array3::zeros((s_n, 1, 1));
        for s in 0..s_n {
            tau[[s, 0]] = rng.sample::<f64, _>(StandardNormal);
            tau[[s, 1]] = 0.3;
            lambda[[s, 0, 0]] = tau[[s, 0]] + raw[s] / sd * 0.3f64.exp();
        }
        let d = PosteriorDraws::new(tau, lambda, "normal-normal-b".into(), "test");
        let k = pooling_factor(&d, spec.as_ref(), 0).unwrap();
        assert!((k[0] - 1.0).abs() < 1e-12, "{k:?}");
    }

    #[test]
    fn missing_hierarchy_is_a_config_error() {
        let spec = ModelConfig::from_id("mvn-hier").unwrap().build().unwrap();
        let d = PosteriorDraws::new(
            Array2::zeros((3, spec.layout().global_dim())),
            Array3::zeros((3, 2, spec.layout().local_dim())),
            "mvn-hier".into(),
            "test",
        );
        let past_end = spec.layout().local_dim();
        assert!(matches!(pooling_factor(&d, spec.as_ref(), past_end), Err(Error::Config(_))));
    }
}
