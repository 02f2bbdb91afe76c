//! Two-level generative models and ancestral simulation.

mod data;
pub mod io;
mod model;
mod prior;
mod simulate;

pub use data::{
    Dataset, GlobalParams, GroupData, GroupView, LocalParams, SimItem, SimulationBatch,
};
pub use model::{
    DataDims, HyperRef, ModelSpec, ParamInfo, ParamLayout, SizeDistribution, SizeRange,
};
pub use prior::{normal_log_pdf, Prior, Transform};
pub(crate) use prior::sigmoid;
pub use simulate::{
    sample_global_prior, sample_local_prior, simulate_dataset, simulate_group, simulate_item,
    simulate_items, simulate_training_batch, MIN_SCALE,
};
