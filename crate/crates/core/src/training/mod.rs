//! End-to-end training of summary and inference networks.

mod checkpoint;
mod networks;
mod optim;
mod standardize;

pub use checkpoint::{Checkpoint, TensorEntry, FORMAT_VERSION, MANIFEST};
pub use networks::{
    item_loss, loss_and_grad, mlnpe_loss, prepare_batch, LossBreakdown, LossMode, NetworkConfig,
    Networks, PreparedItem,
};
#[cfg(test)]
pub(crate) use networks::tiny_config;
pub use optim::{clip_global_norm, Adam, Schedule};
pub use standardize::{destandardize, standardize, ParamStats, Standardizer, MIN_STATS_DRAWS};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generative::{simulate_items, SimItem, SimulationBatch};
use crate::nn::Params;
use crate::parallel::Execution;
use crate::rng::{fork_seed, seeded, RngState, SimRng};
use crate::zoo::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of simulated training items.
    pub simulation_budget: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub schedule: Schedule,
    pub seed: u64,
    /// Prior draws used to estimate standardization moments.
    pub stats_draws: usize,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Fresh simulations for every batch instead of a fixed budget.
    pub online: bool,
    /// Held-out items used for the per-epoch validation loss.
    pub validation_size: usize,
    /// Epochs between snapshots handed to the progress hook.
    pub checkpoint_every: Option<usize>,
    pub execution: Execution,
    pub networks: Option<NetworkConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            simulation_budget: 20_000,
            epochs: 200,
            batch_size: 32,
            learning_rate: 5e-4,
            schedule: Schedule::Cosine,
            seed: 0,
            stats_draws: 2000,
            clip_norm: Some(1.0),
            online: false,
            validation_size: 200,
            checkpoint_every: None,
            execution: Execution::Parallel,
            networks: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.simulation_budget < self.batch_size {
            return Err(Error::config("simulation_budget must be at least batch_size"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::config("clip_norm must be positive"));
        }
        if self.validation_size == 0 {
            return Err(Error::config("validation_size must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub validation: f64,
}

/// Trains from scratch.
pub fn train(model: &ModelConfig, config: &TrainConfig) -> Result<Checkpoint> {
    train_with(model, config, &mut |_, _| Ok(()))
}

/// Trains, calling `hook(epoch, snapshot)` every `checkpoint_every` epochs.
pub fn train_with(
    model: &ModelConfig,
    config: &TrainConfig,
    hook: &mut dyn FnMut(usize, &Checkpoint) -> Result<()>,
) -> Result<Checkpoint> {
    config.validate()?;
    let spec = model.build()?;
    let mut rng = seeded(config.seed);
    let stats = ParamStats::estimate(spec.as_ref(), config.stats_draws, fork_seed(&mut rng))?;
    let data_seed = fork_seed(&mut rng);
    let val_seed = fork_seed(&mut rng);
    let net_cfg = config
        .networks
        .clone()
        .unwrap_or_else(|| NetworkConfig::for_model(spec.as_ref()));
    let mut nets = Networks::new(spec.as_ref(), &net_cfg, &mut seeded(fork_seed(&mut rng)))?;
    let exec = config.execution;

    let validation = simulate_items(spec.as_ref(), config.validation_size, val_seed, exec)?;
    let val_items = prepare_batch(&SimulationBatch::from_items(&validation)?, &stats);
    let train_items: Vec<SimItem> = if config.online {
        vec![]
    } else {
        simulate_items(spec.as_ref(), config.simulation_budget, data_seed, exec)?
    };

    let mut checkpoint = Checkpoint {
        model: model.clone(),
        model_hash: spec.hash(),
        networks_config: net_cfg,
        train_config: config.clone(),
        stats: stats.clone(),
        training_range: spec.sizes(),
        rng_state: RngState::capture(&rng),
        initial_loss: None,
        loss_history: vec![],
        nets: nets.clone(),
    };
    if config.epochs == 0 {
        return Ok(checkpoint);
    }
    let eval = |nets: &Networks| -> Result<f64> {
        Ok(loss_and_grad(nets, &val_items, LossMode::Eval, false, exec)?.0.total)
    };
    checkpoint.initial_loss = Some(eval(&nets)?);

    let steps_per_epoch = config.simulation_budget.div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut adam = Adam::new(nets.num_params());
    let mut params = nets.flatten();
    let mut order: Vec<usize> = (0..train_items.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for b in 0..steps_per_epoch {
            let batch_items: Vec<SimItem> = if config.online {
                simulate_items(spec.as_ref(), config.batch_size, fork_seed(&mut rng), exec)?
            } else {
                let lo = b * config.batch_size;
                let hi = (lo + config.batch_size).min(order.len());
                order[lo..hi].iter().map(|&i| train_items[i].clone()).collect()
            };
            let items = prepare_batch(&SimulationBatch::from_items(&batch_items)?, &stats);
            let dropout_seed = fork_seed(&mut rng);
            let outcome = loss_and_grad(&nets, &items, LossMode::Train { seed: dropout_seed }, true, exec);
            let diverged = |reason: String, rng: &SimRng| Error::Diverged {
                epoch,
                step,
                reason,
                last_good: Box::new(Checkpoint {
                    nets: nets.clone(),
                    rng_state: RngState::capture(rng),
                    loss_history: history.clone(),
                    ..checkpoint.clone()
                }),
            };
            let (loss, grad) = match outcome {
                Ok((loss, Some(grad))) => (loss, grad),
                Ok(_) => unreachable!("gradient requested"),
                Err(Error::Numeric(reason)) => return Err(diverged(reason, &rng)),
                Err(e) => return Err(e),
            };
            let mut grad = grad;
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(diverged("non-finite gradient".into(), &rng));
            }
            if let Some(c) = config.clip_norm {
                clip_global_norm(&mut grad, c);
            }
            let lr = config.schedule.rate(config.learning_rate, step, total_steps);
            adam.step(&mut params, &grad, lr);
            if params.iter().any(|p| !p.is_finite()) {
                return Err(diverged("weights overflowed".into(), &rng));
            }
            nets.set_flat(&params);
            epoch_loss += loss.total;
            step += 1;
        }
        let record = EpochLoss {
            epoch: epoch + 1,
            train: epoch_loss / steps_per_epoch as f64,
            validation: eval(&nets)?,
        };
        log::info!(
            "epoch {} train {:.4} validation {:.4}",
            record.epoch,
            record.train,
            record.validation
        );
        history.push(record);
        if config.checkpoint_every.is_some_and(|k| k > 0 && (epoch + 1) % k == 0) {
            checkpoint.nets = nets.clone();
            checkpoint.loss_history = history.clone();
            checkpoint.rng_state = RngState::capture(&rng);
            hook(epoch + 1, &checkpoint)?;
        }
    }
    checkpoint.nets = nets;
    checkpoint.loss_history = history;
    checkpoint.rng_state = RngState::capture(&rng);
    Ok(checkpoint)
}
