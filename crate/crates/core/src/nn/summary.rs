//! Two-stage summaries: one vector per group, then one per dataset.

use serde::{Deserialize, Serialize};

use super::{DeepSet, DeepSetConfig, DeepSetTrace, LstmConfig, LstmSummary, LstmTrace, Params};
use crate::error::{Error, Result};
use crate::generative::{DataDims, GroupView};
use crate::rng::SimRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocalSummaryConfig {
    /// Exchangeable observations.
    Set(DeepSetConfig),
    /// Ordered observations.
    Sequential(LstmConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryConfig {
    pub local: LocalSummaryConfig,
    pub global: DeepSetConfig,
}

impl SummaryConfig {
    /// Defaults matched to the data layout of a model.
    pub fn for_data(dims: &DataDims) -> Self {
        let local = if dims.sequential {
            LocalSummaryConfig::Sequential(LstmConfig::default())
        } else {
            LocalSummaryConfig::Set(DeepSetConfig::default())
        };
        SummaryConfig {
            local,
            global: DeepSetConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LocalSummarizer {
    Set(DeepSet),
    Sequential(LstmSummary),
}

#[derive(Clone, Debug)]
pub enum LocalTrace {
    Set(DeepSetTrace),
    Sequential(LstmTrace),
}

impl LocalTrace {
    pub fn output(&self) -> &[f64] {
        match self {
            LocalTrace::Set(t) => t.output(),
            LocalTrace::Sequential(t) => t.output(),
        }
    }
}

impl LocalSummarizer {
    pub fn new(input: usize, cfg: &LocalSummaryConfig, rng: &mut SimRng) -> Result<Self> {
        Ok(match cfg {
            LocalSummaryConfig::Set(c) => LocalSummarizer::Set(DeepSet::new(input, c, rng)?),
            LocalSummaryConfig::Sequential(c) => {
                LocalSummarizer::Sequential(LstmSummary::new(input, c, rng)?)
            }
        })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            LocalSummarizer::Set(n) => n.input,
            LocalSummarizer::Sequential(n) => n.input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            LocalSummarizer::Set(n) => n.output_dim(),
            LocalSummarizer::Sequential(n) => n.output_dim(),
        }
    }

    pub fn eval(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        match self {
            LocalSummarizer::Set(n) => n.eval(rows),
            LocalSummarizer::Sequential(n) => n.eval(rows),
        }
    }

    pub fn forward(&self, rows: &[Vec<f64>]) -> Result<LocalTrace> {
        Ok(match self {
            LocalSummarizer::Set(n) => LocalTrace::Set(n.forward(rows)?),
            LocalSummarizer::Sequential(n) => LocalTrace::Sequential(n.forward(rows)?),
        })
    }

    pub fn backward(&self, trace: &LocalTrace, dy: &[f64], grad: &mut LocalSummarizer) {
        match (self, trace, grad) {
            (LocalSummarizer::Set(n), LocalTrace::Set(t), LocalSummarizer::Set(g)) => {
                n.backward(t, dy, g);
            }
            (
                LocalSummarizer::Sequential(n),
                LocalTrace::Sequential(t),
                LocalSummarizer::Sequential(g),
            ) => n.backward(t, dy, g),
            _ => unreachable!("trace and gradient match the network kind"),
        }
    }
}

impl Params for LocalSummarizer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        match self {
            LocalSummarizer::Set(n) => n.visit(prefix, f),
            LocalSummarizer::Sequential(n) => n.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        match self {
            LocalSummarizer::Set(n) => n.visit_mut(prefix, f),
            LocalSummarizer::Sequential(n) => n.visit_mut(prefix, f),
        }
    }
}

/// Set summary over the local summaries of a dataset.
pub type GlobalSummarizer = DeepSet;

/// Summary of one group; only unmasked rows are read.
pub fn local_summarize(group: &GroupView<'_>, net: &LocalSummarizer) -> Result<Vec<f64>> {
    if group.input_dim() != net.input_dim() {
        return Err(Error::config(format!(
            "group rows have dimension {}, summary network expects {}",
            group.input_dim(),
            net.input_dim()
        )));
    }
    net.eval(&group.rows())
}

/// Summary of a dataset from its local summaries; masked groups are skipped.
pub fn global_summarize(
    locals: &[Vec<f64>],
    group_mask: Option<&[bool]>,
    net: &GlobalSummarizer,
) -> Result<Vec<f64>> {
    let active: Vec<Vec<f64>> = locals
        .iter()
        .enumerate()
        .filter(|(j, _)| group_mask.is_none_or(|m| m[*j]))
        .map(|(_, s)| s.clone())
        .collect();
    if active.is_empty() {
        return Err(Error::argument("no unmasked groups to summarize"));
    }
    net.eval(&active)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generative::GroupData;
    use crate::nn::Pooling;
    use crate::rng::seeded;
    use ndarray::{s, Array1, Array2};

    #[test]
    fn masked_padding_is_ignored() {
        let net = LocalSummarizer::new(
            1,
            &LocalSummaryConfig::Set(DeepSetConfig {
                encoder: vec![8],
                decoder: vec![],
                output: 4,
                pooling: Pooling::Mean,
                count_feature: true,
                activation: Default::default(),
            }),
            &mut seeded(1),
        )
        .unwrap();
        let g = GroupData::new(Array2::from_shape_vec((3, 1), vec![0.1, -0.4, 2.0]).unwrap(), None).unwrap();
        let full = local_summarize(&g.view(), &net).unwrap();
        let mut padded = Array2::from_elem((5, 1), 1e6);
        padded.slice_mut(s![..3, ..]).assign(&g.observations);
        let mask = Array1::from(vec![1u8, 1, 1, 0, 0]);
        let view = GroupView {
            observations: padded.view(),
            covariates: None,
            mask: Some(mask.view()),
        };
        assert_eq!(local_summarize(&view, &net).unwrap(), full);
    }

    #[test]
    fn global_summary_of_identity_stub_and_errors() {
        let net = DeepSet::identity_sum(2);
        let locals = vec![vec![1.0, 2.0], vec![0.5, 0.5], vec![9.0, 9.0]];
        let out = global_summarize(&locals, Some(&[true, true, false]), &net).unwrap();
        assert_eq!(out, vec![1.5, 2.5]);
        assert!(matches!(
            global_summarize(&locals, Some(&[false, false, false]), &net),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let net = LocalSummarizer::new(2, &LocalSummaryConfig::Set(DeepSetConfig::default()), &mut seeded(1)).unwrap();
        let g = GroupData::new(Array2::zeros((3, 1)), None).unwrap();
        assert!(matches!(local_summarize(&g.view(), &net), Err(Error::Config(_))));
    }
}
