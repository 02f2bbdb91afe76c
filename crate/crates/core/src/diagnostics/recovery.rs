//! Parameter recovery: posterior means and central intervals against the
//! simulating truth.

use serde::{Deserialize, Serialize};

use super::sbc::{checked_names, Replication};
use super::{mean, pearson, quantile, sorted};
use crate::error::{Error, Result};
use crate::generative::ModelSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub name: String,
    pub truths: Vec<f64>,
    pub means: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Root mean squared error of the posterior mean.
    pub rmse: f64,
    /// Fraction of cases whose interval contains the truth. A degenerate
    /// interval containing the truth as a point counts as covering it.
    pub coverage: f64,
    /// Pearson correlation of posterior means with truths; NaN when either
    /// side is constant and they differ.
    pub correlation: f64,
}

/// Recovery summary for one scalar parameter over several cases.
/// `draws[i]` are the posterior draws for case `i`; `level` is the central
/// interval mass.
pub fn recovery_stats(name: &str, truths: &[f64], draws: &[Vec<f64>], level: f64) -> Result<Recovery> {
    if truths.len() != draws.len() || truths.is_empty() {
        return Err(Error::argument(format!(
            "{} truths but {} draw sets",
            truths.len(),
            draws.len()
        )));
    }
    if draws.iter().any(Vec::is_empty) {
        return Err(Error::argument("every case needs at least one draw"));
    }
    let a = (1.0 - level) / 2.0;
    let mut means = Vec::with_capacity(truths.len());
    let mut lower = Vec::with_capacity(truths.len());
    let mut upper = Vec::with_capacity(truths.len());
    for d in draws {
        let s = sorted(d);
        means.push(mean(d));
        lower.push(quantile(&s, a));
        upper.push(quantile(&s, 1.0 - a));
    }
    let n = truths.len() as f64;
    let rmse = (means.iter().zip(truths).map(|(m, t)| (m - t).powi(2)).sum::<f64>() / n).sqrt();
    let covered = truths
        .iter()
        .zip(lower.iter().zip(&upper))
        .filter(|(t, (lo, hi))| lo <= t && t <= hi)
        .count();
    Ok(Recovery {
        name: name.into(),
        truths: truths.to_vec(),
        correlation: pearson(&means, truths),
        means,
        lower,
        upper,
        rmse,
        coverage: covered as f64 / n,
    })
}

/// Recovery on the constrained scale for every global parameter, and for
/// every local parameter pooled over the checked groups of each case.
pub fn recovery_from_replications(
    spec: &dyn ModelSpec,
    reps: &[Replication],
    level: f64,
) -> Result<Vec<Recovery>> {
    let first = reps.first().ok_or_else(|| Error::argument("no replications"))?;
    let groups = spec.sizes().groups.min;
    let g_names = spec.constrained_global_names();
    let l_names = spec.layout().local_names();
    let (d_g, d_l) = (g_names.len(), l_names.len());
    if first.truth_constrained.len() != checked_names(spec, groups, true).len() {
        return Err(Error::argument("replications do not match the model layout"));
    }
    let collect = |cols: &[usize]| {
        let mut truths = Vec::new();
        let mut draws = Vec::new();
        for rep in reps {
            for &c in cols {
                truths.push(rep.truth_constrained[c]);
                draws.push(rep.draws_constrained.column(c).to_vec());
            }
        }
        (truths, draws)
    };
    let mut out = Vec::with_capacity(d_g + d_l);
    for (k, name) in g_names.iter().enumerate() {
        let (t, d) = collect(&[k]);
        out.push(recovery_stats(name, &t, &d, level)?);
    }
    for (k, name) in l_names.iter().enumerate() {
        let cols: Vec<usize> = (0..groups).map(|j| d_g + j * d_l + k).collect();
        let (t, d) = collect(&cols);
        out.push(recovery_stats(name, &t, &d, level)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn degenerate_draws_recover_exactly() {
        let truths = [0.5, -1.0, 2.0];
        let draws: Vec<Vec<f64>> = truths.iter().map(|&t| vec![t; 5]).collect();
        let r = recovery_stats("x", &truths, &draws, 0.95).unwrap();
        assert_eq!(r.rmse, 0.0);
        assert_eq!(r.correlation, 1.0);
        assert_eq!(r.coverage, 1.0);
    }

    #[test]
    fn noisy_posterior_correlates() {
        let mut rng = seeded(4);
        let truths: Vec<f64> = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
        let draws: Vec<Vec<f64>> = truths
            .iter()
            .map(|t| (0..50).map(|_| t + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let r = recovery_stats("x", &truths, &draws, 0.95).unwrap();
        assert!(r.correlation > 0.99);
    }

    #[test]
    fn exact_posterior_has_nominal_coverage() {
        // Truth ~ N(m, 1) with posterior N(m, 1): intervals are calibrated.
        let mut rng = seeded(5);
        let n = 2000;
        let mut truths = Vec::with_capacity(n);
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            let m: f64 = rng.sample::<f64, _>(StandardNormal) * 3.0;
            truths.push(m + rng.sample::<f64, _>(StandardNormal));
            draws.push((0..400).map(|_| m + rng.sample::<f64, _>(StandardNormal)).collect());
        }
        let r = recovery_stats("x", &truths, &draws, 0.95).unwrap();
        let se = (0.95 * 0.05 / n as f64).sqrt();
        // Finite-draw quantiles add a little slack on top of 3 SE.
        assert!((r.coverage - 0.95).abs() < 3.0 * se + 0.005, "{}", r.coverage);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(recovery_stats("x", &[1.0], &[], 0.95).is_err());
    }
}
