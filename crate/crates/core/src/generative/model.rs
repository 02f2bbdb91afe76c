//! The contract every two-level generative model implements.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Debug;

use super::data::{GlobalParams, GroupData};
use super::prior::Transform;
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Inclusive integer range; `min == max` gives a constant size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeRange {
    pub min: usize,
    pub max: usize,
}

impl SizeRange {
    pub fn new(min: usize, max: usize) -> Self {
        SizeRange { min, max }
    }

    pub fn fixed(n: usize) -> Self {
        SizeRange { min: n, max: n }
    }

    pub fn contains(&self, n: usize) -> bool {
        (self.min..=self.max).contains(&n)
    }

    /// Discrete uniform draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }
}

/// Distributions of the number of groups `J` and of observations per group.
/// All groups of one dataset share the same observation count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeDistribution {
    pub groups: SizeRange,
    pub obs: SizeRange,
}

impl SizeDistribution {
    pub fn validate(&self) -> Result<()> {
        if self.groups.min < 1 || self.obs.min < 1 {
            return Err(Error::config("size ranges must start at 1 or above"));
        }
        if self.groups.min > self.groups.max || self.obs.min > self.obs.max {
            return Err(Error::config("size range has min > max"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub transform: Transform,
}

impl ParamInfo {
    pub fn new(name: impl Into<String>, transform: Transform) -> Self {
        ParamInfo {
            name: name.into(),
            transform,
        }
    }
}

/// Names and scale maps for the three parameter blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub tau: Vec<ParamInfo>,
    pub omega: Vec<ParamInfo>,
    pub local: Vec<ParamInfo>,
}

impl ParamLayout {
    pub fn global_dim(&self) -> usize {
        self.tau.len() + self.omega.len()
    }

    pub fn local_dim(&self) -> usize {
        self.local.len()
    }

    pub fn global_names(&self) -> Vec<String> {
        self.tau
            .iter()
            .chain(&self.omega)
            .map(|p| p.name.clone())
            .collect()
    }

    pub fn local_names(&self) -> Vec<String> {
        self.local.iter().map(|p| p.name.clone()).collect()
    }
}

/// Shape of the per-observation data vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataDims {
    pub obs: usize,
    pub cov: Option<usize>,
    /// Observations within a group are ordered (time series).
    pub sequential: bool,
}

impl DataDims {
    pub fn input(&self) -> usize {
        self.obs + self.cov.unwrap_or(0)
    }
}

/// Where the hierarchical mean and standard deviation of a local parameter
/// live inside the global vector (`tau ++ omega`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum HyperRef {
    /// Mean index and index of a log-scale standard deviation.
    Param { mean: usize, log_sd: usize },
    /// Mean index and a known standard deviation.
    FixedSd { mean: usize, sd: f64 },
}

/// A two-level generative model. Parameters are exchanged on the
/// unconstrained scale; [`ModelSpec::global_to_constrained`] and
/// [`ModelSpec::local_to_constrained`] map to reported values.
pub trait ModelSpec: Send + Sync + Debug {
    fn id(&self) -> &str;

    fn layout(&self) -> &ParamLayout;

    fn data_dims(&self) -> DataDims;

    fn sizes(&self) -> SizeDistribution;

    /// Checks priors and dimensions.
    fn validate(&self) -> Result<()>;

    fn sample_global(&self, rng: &mut SimRng) -> GlobalParams;

    /// One row of local parameters given the global draw.
    fn sample_local(&self, global: &GlobalParams, rng: &mut SimRng) -> Vec<f64>;

    fn sample_covariates(&self, _n_obs: usize, _rng: &mut SimRng) -> Option<Array2<f64>> {
        None
    }

    /// Simulates `n_obs` observation rows. May return non-finite values;
    /// the caller checks.
    fn simulate_observations(
        &self,
        local: &[f64],
        omega: &[f64],
        n_obs: usize,
        covariates: Option<&Array2<f64>>,
        rng: &mut SimRng,
    ) -> Result<Array2<f64>>;

    fn log_prior_global(&self, global: &GlobalParams) -> f64;

    fn log_prior_local(&self, local: &[f64], global: &GlobalParams) -> f64;

    /// `log p(x_j | lambda_j, omega)` when the model has a tractable likelihood.
    fn log_likelihood(
        &self,
        _group: &GroupData,
        _local: &[f64],
        _omega: &[f64],
    ) -> Option<Result<f64>> {
        None
    }

    /// One draw of observation `t` given the observed row `t - 1` (sequential
    /// models only).
    fn one_step_ahead(
        &self,
        _group: &GroupData,
        _t: usize,
        _local: &[f64],
        _omega: &[f64],
        _rng: &mut SimRng,
    ) -> Option<f64> {
        None
    }

    fn hierarchy(&self, _local_index: usize) -> Option<HyperRef> {
        None
    }

    /// Bounded retries for simulators that can emit non-finite output.
    fn max_retries(&self) -> usize {
        3
    }

    /// Canonical JSON description, used for hashing.
    fn describe(&self) -> serde_json::Value;

    fn global_to_constrained(&self, global: &[f64]) -> Vec<f64> {
        let l = self.layout();
        l.tau
            .iter()
            .chain(&l.omega)
            .zip(global)
            .map(|(p, &u)| p.transform.to_constrained(u))
            .collect()
    }

    fn local_to_constrained(&self, local: &[f64]) -> Vec<f64> {
        self.layout()
            .local
            .iter()
            .zip(local)
            .map(|(p, &u)| p.transform.to_constrained(u))
            .collect()
    }

    /// Names of the reported (constrained) global components.
    fn constrained_global_names(&self) -> Vec<String> {
        self.layout().global_names()
    }

    fn hash(&self) -> String {
        let text = serde_json::to_string(&self.describe()).unwrap_or_default();
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
