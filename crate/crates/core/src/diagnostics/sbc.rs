//! Simulation-based calibration ranks.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generative::{simulate_item, ModelSpec};
use crate::parallel::Execution;
use crate::posterior::PosteriorSampler;
use crate::rng::{fork_seed, substream, SimRng};

/// One simulated dataset with its true parameters and posterior draws for
/// the checked parameters: every global component and the locals of the
/// first `J_min` groups (groups every simulated dataset has).
#[derive(Clone, Debug)]
pub struct Replication {
    /// Unconstrained truth.
    pub truth: Vec<f64>,
    /// L x P unconstrained draws.
    pub draws: Array2<f64>,
    /// Constrained truth, same layout.
    pub truth_constrained: Vec<f64>,
    /// L x P constrained draws.
    pub draws_constrained: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbcResult {
    pub names: Vec<String>,
    /// `ranks[p][i]` is the rank of parameter `p` in replication `i`.
    pub ranks: Vec<Vec<usize>>,
    /// Posterior draws per replication (L).
    pub num_draws: usize,
}

impl SbcResult {
    pub fn num_sims(&self) -> usize {
        self.ranks.first().map_or(0, Vec::len)
    }
}

/// Parameter names in replication layout: globals, then `local[j]` for the
/// first `groups` groups. With `constrained`, global names follow the
/// reported parameterization.
pub fn checked_names(spec: &dyn ModelSpec, groups: usize, constrained: bool) -> Vec<String> {
    let mut names = if constrained {
        spec.constrained_global_names()
    } else {
        spec.layout().global_names()
    };
    let local = spec.layout().local_names();
    for j in 0..groups {
        names.extend(local.iter().map(|n| format!("{n}[{j}]")));
    }
    names
}

/// Rank of `theta` among `draws`: the number of draws strictly below it.
/// Ties are split uniformly at random, which is what an infinitesimal
/// jitter of every value would do.
pub fn rank_of(theta: f64, draws: &[f64], rng: &mut SimRng) -> usize {
    let below = draws.iter().filter(|&&d| d < theta).count();
    let ties = draws.iter().filter(|&&d| d == theta).count();
    if ties == 0 {
        below
    } else {
        below + rng.random_range(0..=ties)
    }
}

/// Simulates `num_sims` datasets from the prior predictive and samples
/// `num_draws` posterior draws for each. Replication `i` uses substream `i`
/// of a seed forked from `rng`.
pub fn simulate_and_sample(
    spec: &dyn ModelSpec,
    sampler: &dyn PosteriorSampler,
    num_sims: usize,
    num_draws: usize,
    rng: &mut SimRng,
    exec: Execution,
) -> Result<Vec<Replication>> {
    if num_sims == 0 || num_draws == 0 {
        return Err(Error::argument("num_sims and num_draws must be positive"));
    }
    spec.validate()?;
    let groups = spec.sizes().groups.min;
    let seed = fork_seed(rng);
    exec.try_map(num_sims, |i| {
        let mut r = substream(seed, i as u64);
        let item = simulate_item(spec, &mut r)?;
        let draws = sampler.sample(&item.dataset, num_draws, &mut r)?;
        let d_l = spec.layout().local_dim();
        let mut truth = item.global.concat();
        let mut truth_c = spec.global_to_constrained(&truth);
        for j in 0..groups {
            let l = item.local.lambda.row(j).to_vec();
            truth_c.extend(spec.local_to_constrained(&l));
            truth.extend(l);
        }
        let p = truth.len();
        let mut raw = Array2::zeros((num_draws, p));
        let mut con = Array2::zeros((num_draws, p));
        for s in 0..num_draws {
            let g = draws.tau_omega.row(s).to_vec();
            let gc = spec.global_to_constrained(&g);
            let d_g = g.len();
            for k in 0..d_g {
                raw[[s, k]] = g[k];
                con[[s, k]] = gc[k];
            }
            for j in 0..groups {
                let l: Vec<f64> = (0..d_l).map(|k| draws.lambda[[s, j, k]]).collect();
                let lc = spec.local_to_constrained(&l);
                for k in 0..d_l {
                    raw[[s, d_g + j * d_l + k]] = l[k];
                    con[[s, d_g + j * d_l + k]] = lc[k];
                }
            }
        }
        Ok(Replication {
            truth,
            draws: raw,
            truth_constrained: truth_c,
            draws_constrained: con,
        })
    })
}

/// Ranks of the unconstrained truths among the unconstrained draws.
pub fn sbc_from_replications(
    spec: &dyn ModelSpec,
    reps: &[Replication],
    rng: &mut SimRng,
) -> Result<SbcResult> {
    let first = reps.first().ok_or_else(|| Error::argument("no replications"))?;
    let p = first.truth.len();
    let l = first.draws.nrows();
    let names = checked_names(spec, spec.sizes().groups.min, false);
    if names.len() != p {
        return Err(Error::argument("replications do not match the model layout"));
    }
    let mut ranks = vec![Vec::with_capacity(reps.len()); p];
    for rep in reps {
        if rep.truth.len() != p || rep.draws.dim() != (l, p) {
            return Err(Error::argument("replications have inconsistent shapes"));
        }
        for (k, r) in ranks.iter_mut().enumerate() {
            let col = rep.draws.column(k).to_vec();
            r.push(rank_of(rep.truth[k], &col, rng));
        }
    }
    Ok(SbcResult {
        names,
        ranks,
        num_draws: l,
    })
}

/// Full SBC run: simulate, sample, rank.
pub fn sbc_ranks(
    spec: &dyn ModelSpec,
    sampler: &dyn PosteriorSampler,
    num_sims: usize,
    num_draws: usize,
    rng: &mut SimRng,
    exec: Execution,
) -> Result<SbcResult> {
    let reps = simulate_and_sample(spec, sampler, num_sims, num_draws, rng, exec)?;
    sbc_from_replications(spec, &reps, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::PriorSampler;
    use crate::rng::seeded;
    use crate::zoo::ModelConfig;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn rank_counts_draws_below() {
        let mut rng = seeded(0);
        let d = [0.1, 0.3, 0.7, 0.9];
        assert_eq!(rank_of(0.5, &d, &mut rng), 2);
        assert_eq!(rank_of(-1.0, &d, &mut rng), 0);
        assert_eq!(rank_of(2.0, &d, &mut rng), 4);
    }

    #[test]
    fn ties_are_split_uniformly() {
        let mut rng = seeded(1);
        let d = [1.0; 4];
        let mut counts = [0usize; 5];
        for _ in 0..5000 {
            counts[rank_of(1.0, &d, &mut rng)] += 1;
        }
        assert!(counts.iter().all(|&c| (800..1200).contains(&c)), "{counts:?}");
    }

    #[test]
    fn prior_sampler_gives_uniform_ranks() {
        let spec = ModelConfig::from_id("normal-normal-b").unwrap().build().unwrap();
        let sampler = PriorSampler {
            spec: ModelConfig::from_id("normal-normal-b").unwrap().build().unwrap(),
        };
        let l = 49;
        let mut rng = seeded(11);
        let res = sbc_ranks(spec.as_ref(), &sampler, 1000, l, &mut rng, Execution::Parallel).unwrap();
        assert_eq!(res.num_sims(), 1000);
        // Chi-square over 10 equal-width bins of the 50 rank values.
        let chi = ChiSquared::new(9.0).unwrap();
        let mut min_p: f64 = 1.0;
        for r in &res.ranks {
            assert!(r.iter().all(|&x| x <= l));
            let mut bins = [0.0; 10];
            for &x in r {
                bins[x * 10 / (l + 1)] += 1.0;
            }
            let e = r.len() as f64 / 10.0;
            let stat: f64 = bins.iter().map(|o| (o - e).powi(2) / e).sum();
            min_p = min_p.min(1.0 - chi.cdf(stat));
        }
        // Bonferroni over the checked parameters.
        assert!(min_p > 0.01 / res.ranks.len() as f64, "min p {min_p}");
    }

    #[test]
    fn reruns_are_identical() {
        let spec = ModelConfig::from_id("normal-normal-a").unwrap().build().unwrap();
        let sampler = PriorSampler {
            spec: ModelConfig::from_id("normal-normal-a").unwrap().build().unwrap(),
        };
        let a = sbc_ranks(spec.as_ref(), &sampler, 20, 10, &mut seeded(3), Execution::Parallel).unwrap();
        let b = sbc_ranks(spec.as_ref(), &sampler, 20, 10, &mut seeded(3), Execution::Sequential).unwrap();
        assert_eq!(a, b);
    }
}
