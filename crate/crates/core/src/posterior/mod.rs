//! Amortized posterior sampling: summaries once per dataset, then one
//! global draw and conditionally independent local draws per sample.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::generative::{sample_global_prior, sample_local_prior, Dataset, ModelSpec};
use crate::parallel::Execution;
use crate::rng::{fork_seed, substream, SimRng};
use crate::training::Checkpoint;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawsMeta {
    pub model: String,
    pub sampler: String,
    pub checkpoint: Option<String>,
    pub dataset: String,
    pub seed: Option<u64>,
    pub draws: usize,
    /// Set when the dataset lies outside the checkpoint's training range.
    pub out_of_range: bool,
}

/// Posterior draws on the unconstrained scale.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDraws {
    /// S x (D_tau + D_omega)
    pub tau_omega: Array2<f64>,
    /// S x J x D_local; row `s` was drawn given `tau_omega` row `s`.
    pub lambda: Array3<f64>,
    pub meta: DrawsMeta,
}

impl PosteriorDraws {
    pub fn new(tau_omega: Array2<f64>, lambda: Array3<f64>, model: String, sampler: &str) -> Self {
        let draws = tau_omega.nrows();
        PosteriorDraws {
            tau_omega,
            lambda,
            meta: DrawsMeta {
                model,
                sampler: sampler.into(),
                checkpoint: None,
                dataset: String::new(),
                seed: None,
                draws,
                out_of_range: false,
            },
        }
    }

    pub fn num_draws(&self) -> usize {
        self.tau_omega.nrows()
    }

    pub fn num_groups(&self) -> usize {
        self.lambda.shape()[1]
    }

    pub fn constrained_global(&self, spec: &dyn ModelSpec) -> Array2<f64> {
        let rows: Vec<Vec<f64>> = self
            .tau_omega
            .rows()
            .into_iter()
            .map(|r| spec.global_to_constrained(&r.to_vec()))
            .collect();
        let d = rows.first().map_or(0, Vec::len);
        Array2::from_shape_fn((rows.len(), d), |(s, k)| rows[s][k])
    }

    pub fn constrained_local(&self, spec: &dyn ModelSpec) -> Array3<f64> {
        let (s_n, j_n, d) = self.lambda.dim();
        let mut out = Array3::zeros((s_n, j_n, d));
        for s in 0..s_n {
            for j in 0..j_n {
                let c = spec.local_to_constrained(&self.lambda.slice(ndarray::s![s, j, ..]).to_vec());
                for (k, v) in c.into_iter().enumerate() {
                    out[[s, j, k]] = v;
                }
            }
        }
        out
    }

    /// Long-format CSV of constrained values: `draw,param,group,value`.
    pub fn write_csv<W: Write>(&self, spec: &dyn ModelSpec, mut w: W) -> Result<()> {
        writeln!(w, "draw,param,group,value")?;
        let g_names = spec.constrained_global_names();
        let l_names = spec.layout().local_names();
        let g = self.constrained_global(spec);
        let l = self.constrained_local(spec);
        for s in 0..self.num_draws() {
            for (k, name) in g_names.iter().enumerate() {
                writeln!(w, "{s},{name},,{}", g[[s, k]])?;
            }
            for j in 0..self.num_groups() {
                for (k, name) in l_names.iter().enumerate() {
                    writeln!(w, "{s},{name},{j},{}", l[[s, j, k]])?;
                }
            }
        }
        Ok(())
    }

    /// Writes `path` (CSV) and `path` with a `.json` extension (metadata).
    pub fn save(&self, spec: &dyn ModelSpec, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(spec, std::io::BufWriter::new(file))?;
        let sidecar = serde_json::json!({
            "meta": self.meta,
            "global_names": spec.constrained_global_names(),
            "local_names": spec.layout().local_names(),
            "groups": self.num_groups(),
        });
        std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }
}

/// Anything that draws joint posterior samples for a dataset.
pub trait PosteriorSampler: Send + Sync {
    fn sample(&self, dataset: &Dataset, draws: usize, rng: &mut SimRng) -> Result<PosteriorDraws>;

    /// Draws given every group except `left_out`.
    fn sample_logo(
        &self,
        dataset: &Dataset,
        left_out: usize,
        draws: usize,
        rng: &mut SimRng,
    ) -> Result<PosteriorDraws> {
        check_logo(dataset, left_out)?;
        self.sample(&dataset.without_group(left_out)?, draws, rng)
    }

    fn name(&self) -> String;
}

fn check_logo(dataset: &Dataset, left_out: usize) -> Result<()> {
    if dataset.num_groups() < 2 {
        return Err(Error::argument("leave-one-group-out needs at least two groups"));
    }
    if left_out >= dataset.num_groups() {
        return Err(Error::argument(format!(
            "left-out group {left_out} out of range for {} groups",
            dataset.num_groups()
        )));
    }
    Ok(())
}

/// Content hash of a dataset's numbers.
pub fn dataset_hash(dataset: &Dataset) -> String {
    let mut h = Sha256::new();
    for g in &dataset.groups {
        h.update((g.observations.nrows() as u64).to_le_bytes());
        for v in g.observations.iter() {
            h.update(v.to_le_bytes());
        }
        if let Some(c) = &g.covariates {
            for v in c.iter() {
                h.update(v.to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

/// Checks `dataset` against the checkpoint's training range.
pub fn check_range(dataset: &Dataset, checkpoint: &Checkpoint) -> Result<()> {
    let r = &checkpoint.training_range;
    let j = dataset.num_groups();
    if !r.groups.contains(j) {
        return Err(Error::Range(format!(
            "{j} groups, trained on {}..={}",
            r.groups.min, r.groups.max
        )));
    }
    if let Some(n) = dataset.groups.iter().map(|g| g.n_obs()).find(|&n| !r.obs.contains(n)) {
        return Err(Error::Range(format!(
            "group with {n} observations, trained on {}..={}",
            r.obs.min, r.obs.max
        )));
    }
    Ok(())
}

fn check_dims(dataset: &Dataset, spec: &dyn ModelSpec) -> Result<()> {
    let dims = spec.data_dims();
    if dataset.groups.is_empty() {
        return Err(Error::argument("dataset has no groups"));
    }
    for g in &dataset.groups {
        let cov = g.covariates.as_ref().map(|c| c.ncols());
        if g.observations.ncols() != dims.obs || cov != dims.cov {
            return Err(Error::argument(format!(
                "group has {} observation and {:?} covariate columns; model {} expects {} and {:?}",
                g.observations.ncols(),
                cov,
                spec.id(),
                dims.obs,
                dims.cov
            )));
        }
    }
    Ok(())
}

/// Sampler backed by a trained checkpoint.
pub struct NpeSampler {
    pub checkpoint: Checkpoint,
    spec: Box<dyn ModelSpec>,
    fingerprint: String,
    pub allow_out_of_range: bool,
    pub execution: Execution,
}

impl NpeSampler {
    pub fn new(checkpoint: Checkpoint) -> Result<Self> {
        let spec = checkpoint.spec()?;
        let fingerprint = checkpoint.fingerprint();
        Ok(NpeSampler {
            checkpoint,
            spec,
            fingerprint,
            allow_out_of_range: false,
            execution: Execution::Parallel,
        })
    }

    pub fn spec(&self) -> &dyn ModelSpec {
        self.spec.as_ref()
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Sampling without the range check.
    fn draw(&self, dataset: &Dataset, draws: usize, rng: &mut SimRng) -> Result<PosteriorDraws> {
        check_dims(dataset, self.spec())?;
        if draws == 0 {
            return Err(Error::argument("number of draws must be positive"));
        }
        let nets = &self.checkpoint.nets;
        let stats = &self.checkpoint.stats;
        let (locals, global) = nets.summarize_dataset(dataset)?;
        let d_g = nets.global_flow.dim;
        let d_l = nets.local_flow.dim;
        let j_n = dataset.num_groups();
        // All noise comes from one sequential stream so results do not
        // depend on scheduling.
        let seed = fork_seed(rng);
        let rows = self.execution.try_map(draws, |s| {
            let mut r = substream(seed, s as u64);
            let z: Vec<f64> = (0..d_g).map(|_| r.sample(StandardNormal)).collect();
            let g_std = nets.global_flow.inverse(&z, &global)?;
            let mut lam = Vec::with_capacity(j_n * d_l);
            let mut cond = g_std.clone();
            for s_j in &locals {
                cond.truncate(d_g);
                cond.extend_from_slice(s_j);
                let z: Vec<f64> = (0..d_l).map(|_| r.sample(StandardNormal)).collect();
                let l_std = nets.local_flow.inverse(&z, &cond)?;
                lam.extend(stats.local.destandardize(&l_std));
            }
            Ok((stats.global.destandardize(&g_std), lam))
        })?;
        let mut tau_omega = Array2::zeros((draws, d_g));
        let mut lambda = Array3::zeros((draws, j_n, d_l));
        for (s, (g, l)) in rows.into_iter().enumerate() {
            if g.iter().chain(&l).any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("non-finite posterior draw {s}")));
            }
            tau_omega.row_mut(s).assign(&ndarray::ArrayView1::from(&g));
            for j in 0..j_n {
                for k in 0..d_l {
                    lambda[[s, j, k]] = l[j * d_l + k];
                }
            }
        }
        let mut out = PosteriorDraws::new(tau_omega, lambda, self.spec.id().into(), "npe");
        out.meta.checkpoint = Some(self.fingerprint.clone());
        out.meta.dataset = dataset_hash(dataset);
        Ok(out)
    }
}

impl PosteriorSampler for NpeSampler {
    fn sample(&self, dataset: &Dataset, draws: usize, rng: &mut SimRng) -> Result<PosteriorDraws> {
        let mut out_of_range = false;
        if let Err(e) = check_range(dataset, &self.checkpoint) {
            if !self.allow_out_of_range {
                return Err(e);
            }
            log::warn!("{e}; sampling anyway");
            out_of_range = true;
        }
        let mut out = self.draw(dataset, draws, rng)?;
        out.meta.out_of_range = out_of_range;
        Ok(out)
    }

    fn sample_logo(
        &self,
        dataset: &Dataset,
        left_out: usize,
        draws: usize,
        rng: &mut SimRng,
    ) -> Result<PosteriorDraws> {
        logo_posterior(dataset, left_out, draws, self, rng)
    }

    fn name(&self) -> String {
        format!("npe:{}", &self.fingerprint[..12])
    }
}

/// Ignores the data and samples the prior.
pub struct PriorSampler {
    pub spec: Box<dyn ModelSpec>,
}

impl PosteriorSampler for PriorSampler {
    fn sample(&self, dataset: &Dataset, draws: usize, rng: &mut SimRng) -> Result<PosteriorDraws> {
        let j_n = dataset.num_groups();
        let d_g = self.spec.layout().global_dim();
        let d_l = self.spec.layout().local_dim();
        let mut tau_omega = Array2::zeros((draws, d_g));
        let mut lambda = Array3::zeros((draws, j_n, d_l));
        for s in 0..draws {
            let g = sample_global_prior(self.spec.as_ref(), rng)?;
            let l = sample_local_prior(&g, j_n, self.spec.as_ref(), rng)?;
            tau_omega.row_mut(s).assign(&ndarray::ArrayView1::from(&g.concat()));
            lambda.slice_mut(ndarray::s![s, .., ..]).assign(&l.lambda);
        }
        let mut out = PosteriorDraws::new(tau_omega, lambda, self.spec.id().into(), "prior");
        out.meta.dataset = dataset_hash(dataset);
        Ok(out)
    }

    fn name(&self) -> String {
        "prior".into()
    }
}

/// Draws `draws` joint samples for `dataset`; datasets outside the training
/// range are rejected.
pub fn sample_posterior(
    dataset: &Dataset,
    draws: usize,
    checkpoint: &Checkpoint,
    rng: &mut SimRng,
) -> Result<PosteriorDraws> {
    NpeSampler::new(checkpoint.clone())?.sample(dataset, draws, rng)
}

/// Posterior given every group except `left_out`. The range check applies
/// to the full dataset, so removing one group from the smallest trained
/// size is allowed.
pub fn logo_posterior(
    dataset: &Dataset,
    left_out: usize,
    draws: usize,
    sampler: &NpeSampler,
    rng: &mut SimRng,
) -> Result<PosteriorDraws> {
    check_logo(dataset, left_out)?;
    let reduced = dataset.without_group(left_out)?;
    let mut out_of_range = false;
    if let Err(e) = check_range(dataset, &sampler.checkpoint) {
        if !sampler.allow_out_of_range {
            return Err(e);
        }
        out_of_range = true;
    }
    let mut out = sampler.draw(&reduced, draws, rng)?;
    out.meta.out_of_range = out_of_range;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generative::simulate_dataset;
    use crate::rng::seeded;
    use crate::training::{tiny_config, train, TrainConfig};
    use crate::zoo::ModelConfig;

    fn untrained(id: &str) -> Checkpoint {
        let cfg = TrainConfig {
            simulation_budget: 8,
            epochs: 0,
            batch_size: 8,
            stats_draws: 1000,
            validation_size: 4,
            networks: Some(tiny_config(false)),
            ..TrainConfig::default()
        };
        train(&ModelConfig::from_id(id).unwrap(), &cfg).unwrap()
    }

    fn briefly_trained(id: &str) -> Checkpoint {
        let cfg = TrainConfig {
            simulation_budget: 16,
            epochs: 2,
            batch_size: 8,
            stats_draws: 1000,
            validation_size: 4,
            networks: Some(tiny_config(false)),
            ..TrainConfig::default()
        };
        train(&ModelConfig::from_id(id).unwrap(), &cfg).unwrap()
    }

    fn data(spec: &dyn ModelSpec, j: usize, n: usize) -> Dataset {
        simulate_dataset(spec, j, n, &mut seeded(42)).unwrap().dataset
    }

    #[test]
    fn untrained_draws_follow_the_standardized_base() {
        let ck = untrained("normal-normal-b");
        let sampler = NpeSampler::new(ck.clone()).unwrap();
        let ds = data(sampler.spec(), 8, 10);
        let s_n = 100_000;
        let d = sampler.sample(&ds, s_n, &mut seeded(1)).unwrap();
        for k in 0..d.tau_omega.ncols() {
            let z: Vec<f64> = d
                .tau_omega
                .column(k)
                .iter()
                .map(|v| (v - ck.stats.global.mean[k]) / ck.stats.global.sd[k])
                .collect();
            let m = z.iter().sum::<f64>() / s_n as f64;
            assert!(m.abs() < 3.0 / (s_n as f64).sqrt(), "dim {k}: {m}");
        }
    }

    #[test]
    fn permuting_groups_keeps_global_draws_and_permutes_locals() {
        let ck = briefly_trained("normal-normal-b");
        let sampler = NpeSampler::new(ck).unwrap();
        let ds = data(sampler.spec(), 8, 10);
        let perm = [3, 1, 7, 0, 2, 6, 5, 4];
        let a = sampler.sample(&ds, 200, &mut seeded(3)).unwrap();
        let b = sampler.sample(&ds.permuted(&perm), 200, &mut seeded(3)).unwrap();
        assert_eq!(a.tau_omega, b.tau_omega);
        // Local noise is drawn in group order, so locals permute in
        // distribution: compare per-group means.
        for (i, &p) in perm.iter().enumerate() {
            let ma = a.lambda.slice(ndarray::s![.., p, 0]).mean().unwrap();
            let mb = b.lambda.slice(ndarray::s![.., i, 0]).mean().unwrap();
            let sd = a.lambda.slice(ndarray::s![.., p, 0]).std(1.0);
            assert!((ma - mb).abs() < 5.0 * sd * (2.0f64 / 200.0).sqrt(), "group {p}");
        }
        assert_eq!(b.num_groups(), 8);
    }

    #[test]
    fn logo_matches_sampling_the_reduced_dataset() {
        let ck = briefly_trained("normal-normal-a");
        let mut sampler = NpeSampler::new(ck).unwrap();
        let ds = data(sampler.spec(), 8, 10);
        let a = logo_posterior(&ds, 2, 50, &sampler, &mut seeded(5)).unwrap();
        assert!(!a.meta.out_of_range);
        // The reduced dataset has 7 groups, outside the fixed training size.
        assert!(matches!(
            sampler.sample(&ds.without_group(2).unwrap(), 50, &mut seeded(5)),
            Err(Error::Range(_))
        ));
        sampler.allow_out_of_range = true;
        let b = sampler.sample(&ds.without_group(2).unwrap(), 50, &mut seeded(5)).unwrap();
        assert!(b.meta.out_of_range);
        assert_eq!(a.tau_omega, b.tau_omega);
        assert_eq!(a.lambda, b.lambda);
        assert_eq!(a.num_groups(), 7);
        let c = sampler.sample_logo(&ds, 2, 50, &mut seeded(5)).unwrap();
        assert_eq!(a.tau_omega, c.tau_omega);
    }

    #[test]
    fn logo_rejects_bad_indices() {
        let ck = untrained("normal-normal-a");
        let sampler = NpeSampler::new(ck).unwrap();
        let ds = data(sampler.spec(), 8, 10);
        assert!(matches!(logo_posterior(&ds, 8, 5, &sampler, &mut seeded(0)), Err(Error::Argument(_))));
        let single = Dataset {
            groups: vec![ds.groups[0].clone()],
        };
        assert!(matches!(logo_posterior(&single, 0, 5, &sampler, &mut seeded(0)), Err(Error::Argument(_))));
    }

    #[test]
    fn out_of_range_requires_override() {
        let ck = untrained("ddm-shared");
        let mut sampler = NpeSampler::new(ck).unwrap();
        let ds = data(sampler.spec(), 40, 20);
        assert!(matches!(sampler.sample(&ds, 5, &mut seeded(0)), Err(Error::Range(_))));
        sampler.allow_out_of_range = true;
        assert!(sampler.sample(&ds, 5, &mut seeded(0)).unwrap().meta.out_of_range);
    }

    #[test]
    fn constrained_draws_satisfy_constraints() {
        let ck = briefly_trained("ddm-hier");
        let sampler = NpeSampler::new(ck).unwrap();
        let spec = sampler.spec();
        let ds = data(spec, 12, 30);
        let d = sampler.sample(&ds, 500, &mut seeded(8)).unwrap();
        let l = d.constrained_local(spec);
        let names = spec.layout().local_names();
        for (k, n) in names.iter().enumerate() {
            let col = l.slice(ndarray::s![.., .., k]);
            match n.as_str() {
                "alpha" | "t0" => assert!(col.iter().all(|&v| v > 0.0), "{n}"),
                "beta" => assert!(col.iter().all(|&v| v > 0.0 && v < 1.0), "{n}"),
                _ => assert!(col.iter().all(|v| v.is_finite())),
            }
        }
        let g = d.constrained_global(spec);
        for (k, n) in spec.constrained_global_names().iter().enumerate() {
            if n.starts_with("sigma") || n == "xi" {
                assert!(g.column(k).iter().all(|&v| v > 0.0), "{n}");
            }
        }
    }

    #[test]
    fn locals_are_conditionally_independent_across_groups() {
        let ck = briefly_trained("normal-normal-b");
        let sampler = NpeSampler::new(ck).unwrap();
        let ds = data(sampler.spec(), 8, 10);
        let s_n = 20_000;
        let d = sampler.sample(&ds, s_n, &mut seeded(9)).unwrap();
        // Residuals after removing the linear dependence on the global draw.
        let resid = |j: usize| -> Vec<f64> {
            let y: Vec<f64> = d.lambda.slice(ndarray::s![.., j, 0]).to_vec();
            let x = d.tau_omega.view();
            let k = x.ncols();
            let mut a = nalgebra::DMatrix::<f64>::zeros(s_n, k + 1);
            for s in 0..s_n {
                a[(s, 0)] = 1.0;
                for c in 0..k {
                    a[(s, c + 1)] = x[[s, c]];
                }
            }
            let yv = nalgebra::DVector::from_vec(y.clone());
            let beta = (a.transpose() * &a).lu().solve(&(a.transpose() * &yv)).unwrap();
            let fit = &a * beta;
            y.iter().zip(fit.iter()).map(|(a, b)| a - b).collect()
        };
        let r0 = resid(0);
        let r1 = resid(1);
        let corr = crate::diagnostics::pearson(&r0, &r1);
        assert!(corr.abs() < 4.0 / (s_n as f64).sqrt(), "{corr}");
    }

    #[test]
    fn csv_output_is_long_format() {
        let ck = untrained("normal-normal-b");
        let sampler = NpeSampler::new(ck).unwrap();
        let ds = data(sampler.spec(), 8, 10);
        let d = sampler.sample(&ds, 3, &mut seeded(1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("draws.csv");
        d.save(sampler.spec(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("draw,param,group,value"));
        assert_eq!(lines.count(), 3 * (2 + 8));
        assert!(text.contains("0,tau,,"));
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(path.with_extension("json")).unwrap()).unwrap();
        assert_eq!(meta["meta"]["draws"], 3);
    }

    #[test]
    fn prior_sampler_ignores_data() {
        let spec = ModelConfig::from_id("mvn-hier").unwrap().build().unwrap();
        let s = PriorSampler {
            spec: ModelConfig::from_id("mvn-hier").unwrap().build().unwrap(),
        };
        let ds = data(spec.as_ref(), 10, 10);
        let d = s.sample(&ds, 4, &mut seeded(0)).unwrap();
        assert_eq!(d.lambda.dim(), (4, 10, 4));
    }
}
