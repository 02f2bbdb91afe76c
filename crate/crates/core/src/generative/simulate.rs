//! Ancestral simulation: global draw, local draws, then group data.

use ndarray::Array2;

use super::data::{Dataset, GlobalParams, GroupData, LocalParams, SimItem, SimulationBatch};
use super::model::ModelSpec;
use crate::error::{Error, Result};
use crate::parallel::Execution;
use crate::rng::{fork_seed, substream, SimRng};

/// Smallest standard deviation used when drawing from a conditional prior.
pub const MIN_SCALE: f64 = 1e-6;

pub fn sample_global_prior(spec: &dyn ModelSpec, rng: &mut SimRng) -> Result<GlobalParams> {
    spec.validate()?;
    let g = spec.sample_global(rng);
    let layout = spec.layout();
    if g.tau.len() != layout.tau.len() || g.omega.len() != layout.omega.len() {
        return Err(Error::config(format!(
            "model {} produced global dims ({}, {}) but declares ({}, {})",
            spec.id(),
            g.tau.len(),
            g.omega.len(),
            layout.tau.len(),
            layout.omega.len()
        )));
    }
    Ok(g)
}

pub fn sample_local_prior(
    global: &GlobalParams,
    num_groups: usize,
    spec: &dyn ModelSpec,
    rng: &mut SimRng,
) -> Result<LocalParams> {
    if num_groups < 1 {
        return Err(Error::argument("number of groups must be at least 1"));
    }
    let d = spec.layout().local_dim();
    let mut lambda = Array2::zeros((num_groups, d));
    for mut row in lambda.rows_mut() {
        let draw = spec.sample_local(global, rng);
        if draw.len() != d {
            return Err(Error::config(format!(
                "model {} produced {} local params, declares {d}",
                spec.id(),
                draw.len()
            )));
        }
        row.assign(&ndarray::ArrayView1::from(&draw));
    }
    Ok(LocalParams { lambda })
}

/// Simulates one group. Non-finite output is retried up to the model's
/// retry limit with fresh noise, then reported with the offending parameters.
pub fn simulate_group(
    local: &[f64],
    omega: &[f64],
    n_obs: usize,
    covariates: Option<Array2<f64>>,
    spec: &dyn ModelSpec,
    rng: &mut SimRng,
) -> Result<GroupData> {
    if n_obs < 1 {
        return Err(Error::argument("n_obs must be at least 1"));
    }
    let mut last_reason = String::new();
    for _ in 0..=spec.max_retries() {
        match spec.simulate_observations(local, omega, n_obs, covariates.as_ref(), rng) {
            Ok(obs) if obs.iter().all(|v| v.is_finite()) => {
                return GroupData::new(obs, covariates);
            }
            Ok(_) => last_reason = "non-finite observation".into(),
            Err(Error::Simulation { reason, .. }) => last_reason = reason,
            Err(e) => return Err(e),
        }
    }
    let mut params = local.to_vec();
    params.extend_from_slice(omega);
    Err(Error::Simulation {
        reason: last_reason,
        params,
    })
}

/// Simulates a full item with the given number of groups and observations.
pub fn simulate_dataset(
    spec: &dyn ModelSpec,
    num_groups: usize,
    n_obs: usize,
    rng: &mut SimRng,
) -> Result<SimItem> {
    let global = sample_global_prior(spec, rng)?;
    let local = sample_local_prior(&global, num_groups, spec, rng)?;
    let mut groups = Vec::with_capacity(num_groups);
    for row in local.lambda.rows() {
        let cov = spec.sample_covariates(n_obs, rng);
        let row = row.to_vec();
        groups.push(simulate_group(&row, &global.omega, n_obs, cov, spec, rng)?);
    }
    Ok(SimItem {
        global,
        local,
        dataset: Dataset { groups },
    })
}

/// Simulates an item with sizes drawn from the model's size distribution.
/// A simulation error redraws the whole item from the prior, at most
/// `max_retries` times, with a logged warning.
pub fn simulate_item(spec: &dyn ModelSpec, rng: &mut SimRng) -> Result<SimItem> {
    let sizes = spec.sizes();
    let j = sizes.groups.sample(rng);
    let n = sizes.obs.sample(rng);
    let mut attempt = 0;
    loop {
        match simulate_dataset(spec, j, n, rng) {
            Err(Error::Simulation { reason, params }) if attempt < spec.max_retries() => {
                log::warn!("{}: redrawing item after simulation error ({reason}) at {params:?}", spec.id());
                attempt += 1;
            }
            other => return other,
        }
    }
}

/// `count` items, item `i` drawn from substream `i` of `seed`.
pub fn simulate_items(
    spec: &dyn ModelSpec,
    count: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<SimItem>> {
    spec.validate()?;
    exec.try_map(count, |i| {
        let mut rng = substream(seed, i as u64);
        simulate_item(spec, &mut rng)
    })
}

pub fn simulate_training_batch(
    spec: &dyn ModelSpec,
    batch_size: usize,
    rng: &mut SimRng,
    exec: Execution,
) -> Result<SimulationBatch> {
    if batch_size < 1 {
        return Err(Error::argument("batch_size must be at least 1"));
    }
    let seed = fork_seed(rng);
    let items = simulate_items(spec, batch_size, seed, exec)?;
    SimulationBatch::from_items(&items)
}
