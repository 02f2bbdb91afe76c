//! The four jointly trained networks and the two-part loss.

use serde::{Deserialize, Serialize};

use super::standardize::ParamStats;
use crate::error::{Error, Result};
use crate::flows::{ConditionalFlow, FlowConfig};
use crate::generative::{Dataset, ModelSpec, SimulationBatch};
use crate::nn::{
    join, DeepSet, GlobalSummarizer, LocalSummarizer, Params, SummaryConfig,
};
use crate::parallel::Execution;
use crate::rng::{substream, SimRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub summary: SummaryConfig,
    pub global_flow: FlowConfig,
    pub local_flow: FlowConfig,
}

impl NetworkConfig {
    pub fn for_model(spec: &dyn ModelSpec) -> Self {
        NetworkConfig {
            summary: SummaryConfig::for_data(&spec.data_dims()),
            global_flow: FlowConfig::default(),
            local_flow: FlowConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Networks {
    pub local_summary: LocalSummarizer,
    pub global_summary: GlobalSummarizer,
    /// Over standardized `tau ++ omega`, conditioned on the dataset summary.
    pub global_flow: ConditionalFlow,
    /// Over standardized `lambda_j`, conditioned on standardized
    /// `tau ++ omega` followed by the group summary.
    pub local_flow: ConditionalFlow,
}

impl Networks {
    pub fn new(spec: &dyn ModelSpec, cfg: &NetworkConfig, rng: &mut SimRng) -> Result<Self> {
        let layout = spec.layout();
        let local_summary = LocalSummarizer::new(spec.data_dims().input(), &cfg.summary.local, rng)?;
        let s_dim = local_summary.output_dim();
        let global_summary = DeepSet::new(s_dim, &cfg.summary.global, rng)?;
        let g_dim = global_summary.output_dim();
        let d_g = layout.global_dim();
        let global_flow = ConditionalFlow::new(d_g, g_dim, &cfg.global_flow, rng)?;
        let local_flow = ConditionalFlow::new(layout.local_dim(), d_g + s_dim, &cfg.local_flow, rng)?;
        Ok(Networks {
            local_summary,
            global_summary,
            global_flow,
            local_flow,
        })
    }

    /// Group summaries and the dataset summary.
    pub fn summarize(&self, groups: &[Vec<Vec<f64>>]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let locals = groups
            .iter()
            .map(|rows| self.local_summary.eval(rows))
            .collect::<Result<Vec<_>>>()?;
        let global = self.global_summary.eval(&locals)?;
        Ok((locals, global))
    }

    pub fn summarize_dataset(&self, dataset: &Dataset) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let groups: Vec<Vec<Vec<f64>>> = dataset.groups.iter().map(|g| g.view().rows()).collect();
        self.summarize(&groups)
    }
}

impl Params for Networks {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.local_summary.visit(&join(prefix, "local_summary"), f);
        self.global_summary.visit(&join(prefix, "global_summary"), f);
        self.global_flow.visit(&join(prefix, "global_flow"), f);
        self.local_flow.visit(&join(prefix, "local_flow"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.local_summary.visit_mut(&join(prefix, "local_summary"), f);
        self.global_summary.visit_mut(&join(prefix, "global_summary"), f);
        self.global_flow.visit_mut(&join(prefix, "global_flow"), f);
        self.local_flow.visit_mut(&join(prefix, "local_flow"), f);
    }
}

/// One batch item with standardized targets and unmasked group rows.
#[derive(Clone, Debug)]
pub struct PreparedItem {
    pub global: Vec<f64>,
    pub locals: Vec<Vec<f64>>,
    pub groups: Vec<Vec<Vec<f64>>>,
}

pub fn prepare_batch(batch: &SimulationBatch, stats: &ParamStats) -> Vec<PreparedItem> {
    (0..batch.len())
        .map(|m| {
            let mut locals = vec![];
            let mut groups = vec![];
            for j in 0..batch.max_groups() {
                if batch.group_active(m, j) {
                    let lam = batch.local.slice(ndarray::s![m, j, ..]).to_vec();
                    locals.push(stats.local.standardize(&lam));
                    groups.push(batch.group_view(m, j).rows());
                }
            }
            PreparedItem {
                global: stats.global.standardize(&batch.global.row(m).to_vec()),
                locals,
                groups,
            }
        })
        .collect()
}

/// Mean loss over a batch and its two components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub global: f64,
    pub local: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossMode {
    /// Dropout active, driven by substreams of the seed.
    Train { seed: u64 },
    Eval,
}

/// `(global nll, summed local nll)` for one item, accumulating
/// `scale`-weighted gradients when `grad` is given.
pub fn item_loss(
    nets: &Networks,
    item: &PreparedItem,
    mut rng: Option<&mut SimRng>,
    grad: Option<(&mut Networks, f64)>,
) -> Result<(f64, f64)> {
    let traces = item
        .groups
        .iter()
        .map(|rows| nets.local_summary.forward(rows))
        .collect::<Result<Vec<_>>>()?;
    let summaries: Vec<Vec<f64>> = traces.iter().map(|t| t.output().to_vec()).collect();
    let g_trace = nets.global_summary.forward(&summaries)?;
    let gf = nets
        .global_flow
        .forward_trace(&item.global, g_trace.output(), rng.as_deref_mut());
    let nll_g = gf.nll();
    let mut nll_l = 0.0;
    let mut lf = Vec::with_capacity(item.locals.len());
    for (lam, s) in item.locals.iter().zip(&summaries) {
        let mut cond = item.global.clone();
        cond.extend_from_slice(s);
        let tr = nets.local_flow.forward_trace(lam, &cond, rng.as_deref_mut());
        nll_l += tr.nll();
        lf.push(tr);
    }
    if let Some((g, scale)) = grad {
        let d_g = item.global.len();
        let (_, dcond) = nets.global_flow.backward_nll(&gf, scale, &mut g.global_flow);
        let mut ds = nets.global_summary.backward(&g_trace, &dcond, &mut g.global_summary);
        for (j, tr) in lf.iter().enumerate() {
            let (_, dc) = nets.local_flow.backward_nll(tr, scale, &mut g.local_flow);
            for (a, b) in ds[j].iter_mut().zip(&dc[d_g..]) {
                *a += b;
            }
        }
        for (j, t) in traces.iter().enumerate() {
            nets.local_summary.backward(t, &ds[j], &mut g.local_summary);
        }
    }
    Ok((nll_g, nll_l))
}

/// Items per gradient chunk. Fixed so the reduction order never depends on
/// the number of threads.
const CHUNK: usize = 4;

/// Mean loss and, optionally, its flattened gradient.
pub fn loss_and_grad(
    nets: &Networks,
    items: &[PreparedItem],
    mode: LossMode,
    want_grad: bool,
    exec: Execution,
) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
    if items.is_empty() {
        return Err(Error::argument("empty batch"));
    }
    let b = items.len();
    let scale = 1.0 / b as f64;
    let chunks = b.div_ceil(CHUNK);
    let results = exec.try_map(chunks, |c| {
        let mut grad = want_grad.then(|| nets.zeros_like());
        let mut terms = Vec::with_capacity(CHUNK);
        for m in c * CHUNK..((c + 1) * CHUNK).min(b) {
            let mut rng = match mode {
                LossMode::Train { seed } => Some(substream(seed, m as u64)),
                LossMode::Eval => None,
            };
            let (g, l) = item_loss(nets, &items[m], rng.as_mut(), grad.as_mut().map(|g| (g, scale)))?;
            if !(g.is_finite() && l.is_finite()) {
                return Err(Error::numeric(format!("non-finite loss at batch item {m}")));
            }
            terms.push((g, l));
        }
        Ok((terms, grad.map(|g| g.flatten())))
    })?;
    let (mut sum_g, mut sum_l) = (0.0, 0.0);
    let mut flat: Option<Vec<f64>> = None;
    for (terms, grad) in results {
        for (g, l) in terms {
            sum_g += g;
            sum_l += l;
        }
        if let Some(gr) = grad {
            match flat.as_mut() {
                None => flat = Some(gr),
                Some(acc) => acc.iter_mut().zip(&gr).for_each(|(a, b)| *a += b),
            }
        }
    }
    let global = sum_g * scale;
    let local = sum_l * scale;
    Ok((
        LossBreakdown {
            total: global + local,
            global,
            local,
        },
        flat,
    ))
}

/// Mean two-part negative log posterior over a batch.
pub fn mlnpe_loss(
    batch: &SimulationBatch,
    nets: &Networks,
    stats: &ParamStats,
    mode: LossMode,
) -> Result<LossBreakdown> {
    let items = prepare_batch(batch, stats);
    Ok(loss_and_grad(nets, &items, mode, false, Execution::Sequential)?.0)
}

/// Very small networks for fast tests.
#[cfg(test)]
pub(crate) fn tiny_config(sequential: bool) -> NetworkConfig {
    use crate::nn::{Activation, DeepSetConfig, LocalSummaryConfig, LstmConfig, Pooling};
    let set = DeepSetConfig {
        encoder: vec![4],
        decoder: vec![],
        output: 3,
        pooling: Pooling::Mean,
        count_feature: true,
        activation: Activation::Tanh,
    };
    let flow = FlowConfig {
        layers: 2,
        hidden: vec![5],
        activation: Activation::Tanh,
        dropout: 0.0,
        clamp: 1.9,
    };
    NetworkConfig {
        summary: SummaryConfig {
            local: if sequential {
                LocalSummaryConfig::Sequential(LstmConfig {
                    hidden: 3,
                    head: vec![],
                    output: 3,
                    activation: Activation::Tanh,
                    transitions: true,
                })
            } else {
                LocalSummaryConfig::Set(set.clone())
            },
            global: set,
        },
        global_flow: flow.clone(),
        local_flow: flow,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generative::{simulate_items, SimItem};
    use crate::nn::gradcheck;
    use crate::rng::seeded;
    use crate::training::Standardizer;
    use crate::zoo::ModelConfig;
    use rand::Rng;

    fn randomize(nets: &mut Networks, seed: u64) {
        let mut rng = seeded(seed);
        nets.visit_mut("", &mut |_, _, v| {
            v.iter_mut().for_each(|x| *x = rng.random_range(-0.5..0.5));
        });
    }

    fn identity_stats(spec: &dyn ModelSpec) -> ParamStats {
        ParamStats {
            global: Standardizer::identity(spec.layout().global_dim()),
            local: Standardizer::identity(spec.layout().local_dim()),
            draws: 0,
        }
    }

    fn items(id: &str, n: usize) -> (Box<dyn ModelSpec>, Vec<SimItem>) {
        let spec = ModelConfig::from_id(id).unwrap().build().unwrap();
        let items = simulate_items(spec.as_ref(), n, 3, Execution::Sequential).unwrap();
        (spec, items)
    }

    #[test]
    fn fresh_flows_give_standard_normal_nll() {
        let (spec, its) = items("normal-normal-b", 3);
        let nets = Networks::new(spec.as_ref(), &tiny_config(false), &mut seeded(1)).unwrap();
        let batch = SimulationBatch::from_items(&its).unwrap();
        let stats = identity_stats(spec.as_ref());
        let loss = mlnpe_loss(&batch, &nets, &stats, LossMode::Eval).unwrap();
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let mut expect = 0.0;
        for it in &its {
            expect += it.global.concat().iter().map(|v| 0.5 * v * v + 0.5 * ln2pi).sum::<f64>();
            expect += it.local.lambda.iter().map(|v| 0.5 * v * v + 0.5 * ln2pi).sum::<f64>();
        }
        expect /= 3.0;
        assert!((loss.total - expect).abs() < 1e-12 * expect.abs());
        assert!((loss.total - (loss.global + loss.local)).abs() <= 1e-12 * loss.total.abs());
    }

    #[test]
    fn duplicate_item_keeps_mean_and_padding_is_ignored() {
        let (spec, mut its) = items("air-traffic", 2);
        let mut nets = Networks::new(spec.as_ref(), &tiny_config(true), &mut seeded(1)).unwrap();
        randomize(&mut nets, 4);
        let stats = identity_stats(spec.as_ref());
        its[1] = its[0].clone();
        let one = SimulationBatch::from_items(&its[..1]).unwrap();
        let two = SimulationBatch::from_items(&its).unwrap();
        let a = mlnpe_loss(&one, &nets, &stats, LossMode::Eval).unwrap().total;
        let b = mlnpe_loss(&two, &nets, &stats, LossMode::Eval).unwrap().total;
        assert!((a - b).abs() <= 1e-12 * a.abs());

        let (spec, its) = items("air-traffic", 3);
        let mut batch = SimulationBatch::from_items(&its).unwrap();
        let base = mlnpe_loss(&batch, &nets, &identity_stats(spec.as_ref()), LossMode::Eval).unwrap();
        let mask = batch.obs_mask.clone();
        for ((m, j, i, _), v) in batch.observations.indexed_iter_mut() {
            if mask[[m, j, i]] == 0 {
                *v = 1e9;
            }
        }
        if let Some(cov) = batch.covariates.as_mut() {
            for ((m, j, i, _), v) in cov.indexed_iter_mut() {
                if mask[[m, j, i]] == 0 {
                    *v = -1e9;
                }
            }
        }
        let perturbed = mlnpe_loss(&batch, &nets, &identity_stats(spec.as_ref()), LossMode::Eval).unwrap();
        assert_eq!(base.total.to_bits(), perturbed.total.to_bits());
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        for (id, seq) in [("normal-normal-b", false), ("air-traffic", true)] {
            let (spec, its) = items(id, 2);
            let mut nets = Networks::new(spec.as_ref(), &tiny_config(seq), &mut seeded(2)).unwrap();
            randomize(&mut nets, 5);
            let stats = identity_stats(spec.as_ref());
            let prepared = prepare_batch(&SimulationBatch::from_items(&its).unwrap(), &stats);
            let (_, grad) = loss_and_grad(&nets, &prepared, LossMode::Eval, true, Execution::Sequential).unwrap();
            let mut analytic = nets.clone();
            analytic.set_flat(&grad.unwrap());
            let loss = |n: &Networks| {
                loss_and_grad(n, &prepared, LossMode::Eval, false, Execution::Sequential)
                    .unwrap()
                    .0
                    .total
            };
            let err = gradcheck::max_rel_error(&nets, &analytic, loss, 1e-5);
            assert!(err < 1e-4, "{id}: {err}");
        }
    }

    #[test]
    fn parallel_and_sequential_gradients_are_identical() {
        let (spec, its) = items("normal-normal-b", 11);
        let mut nets = Networks::new(spec.as_ref(), &tiny_config(false), &mut seeded(2)).unwrap();
        randomize(&mut nets, 6);
        let prepared = prepare_batch(&SimulationBatch::from_items(&its).unwrap(), &identity_stats(spec.as_ref()));
        let a = loss_and_grad(&nets, &prepared, LossMode::Eval, true, Execution::Sequential).unwrap();
        let b = loss_and_grad(&nets, &prepared, LossMode::Eval, true, Execution::Parallel).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }
}
