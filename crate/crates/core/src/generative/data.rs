//! Parameter and data containers, plus the padded batch layout used for
//! training.

use ndarray::{s, Array2, Array3, Array4, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters `tau` and shared parameters `omega`, both on the
/// unconstrained scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalParams {
    pub tau: Vec<f64>,
    pub omega: Vec<f64>,
}

impl GlobalParams {
    /// `tau` followed by `omega`; the vector the global flow models.
    pub fn concat(&self) -> Vec<f64> {
        let mut v = self.tau.clone();
        v.extend_from_slice(&self.omega);
        v
    }

    pub fn from_concat(v: &[f64], tau_dim: usize) -> Self {
        GlobalParams {
            tau: v[..tau_dim].to_vec(),
            omega: v[tau_dim..].to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.tau.len() + self.omega.len()
    }
}

/// Row `j` holds the local parameters of group `j` (unconstrained scale).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalParams {
    pub lambda: Array2<f64>,
}

impl LocalParams {
    pub fn num_groups(&self) -> usize {
        self.lambda.nrows()
    }
}

/// Observations of one group, with optional row-aligned covariates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupData {
    pub observations: Array2<f64>,
    pub covariates: Option<Array2<f64>>,
}

impl GroupData {
    pub fn new(observations: Array2<f64>, covariates: Option<Array2<f64>>) -> Result<Self> {
        if observations.nrows() == 0 {
            return Err(Error::argument("a group needs at least one observation"));
        }
        if let Some(c) = &covariates {
            if c.nrows() != observations.nrows() {
                return Err(Error::argument(format!(
                    "covariates have {} rows but observations have {}",
                    c.nrows(),
                    observations.nrows()
                )));
            }
        }
        Ok(GroupData {
            observations,
            covariates,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.observations.nrows()
    }

    pub fn view(&self) -> GroupView<'_> {
        GroupView {
            observations: self.observations.view(),
            covariates: self.covariates.as_ref().map(|c| c.view()),
            mask: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub groups: Vec<GroupData>,
}

impl Dataset {
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// The dataset with group `j` removed.
    pub fn without_group(&self, j: usize) -> Result<Dataset> {
        if j >= self.groups.len() {
            return Err(Error::argument(format!(
                "group index {j} out of range for {} groups",
                self.groups.len()
            )));
        }
        let groups = self
            .groups
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != j)
            .map(|(_, g)| g.clone())
            .collect();
        Ok(Dataset { groups })
    }

    /// Groups reordered so that new group `i` is old group `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Dataset {
        Dataset {
            groups: perm.iter().map(|&p| self.groups[p].clone()).collect(),
        }
    }

    pub fn views(&self) -> Vec<GroupView<'_>> {
        self.groups.iter().map(GroupData::view).collect()
    }
}

/// Borrowed group data with an optional observation mask. Summary networks
/// only read rows whose mask entry is 1.
#[derive(Clone, Debug)]
pub struct GroupView<'a> {
    pub observations: ArrayView2<'a, f64>,
    pub covariates: Option<ArrayView2<'a, f64>>,
    pub mask: Option<ArrayView1<'a, u8>>,
}

impl GroupView<'_> {
    pub fn input_dim(&self) -> usize {
        self.observations.ncols() + self.covariates.as_ref().map_or(0, |c| c.ncols())
    }

    fn active(&self, i: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[i] == 1)
    }

    /// Number of unmasked rows.
    pub fn count(&self) -> usize {
        (0..self.observations.nrows())
            .filter(|&i| self.active(i))
            .count()
    }

    /// Unmasked rows, each the observation row followed by its covariates.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.observations.nrows())
            .filter(|&i| self.active(i))
            .map(|i| {
                let mut row: Vec<f64> = self.observations.row(i).to_vec();
                if let Some(c) = &self.covariates {
                    row.extend(c.row(i).iter());
                }
                row
            })
            .collect()
    }
}

/// One simulated training example: ground truth plus data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimItem {
    pub global: GlobalParams,
    pub local: LocalParams,
    pub dataset: Dataset,
}

/// Items padded to the batch maxima of `J` and `N`. Masks are exactly 0 or 1.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationBatch {
    /// B x (D_tau + D_omega)
    pub global: Array2<f64>,
    /// B x J_max x D_local
    pub local: Array3<f64>,
    /// B x J_max x N_max x D_obs
    pub observations: Array4<f64>,
    /// B x J_max x N_max x D_cov
    pub covariates: Option<Array4<f64>>,
    /// B x J_max
    pub group_mask: Array2<u8>,
    /// B x J_max x N_max
    pub obs_mask: Array3<u8>,
    pub tau_dim: usize,
}

impl SimulationBatch {
    pub fn from_items(items: &[SimItem]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::argument("batch needs at least one item"))?;
        let b = items.len();
        let d_g = first.global.dim();
        let d_l = first.local.lambda.ncols();
        let d_obs = first.dataset.groups[0].observations.ncols();
        let d_cov = first.dataset.groups[0]
            .covariates
            .as_ref()
            .map(|c| c.ncols());
        let j_max = items.iter().map(|it| it.dataset.num_groups()).max().unwrap_or(0);
        let n_max = items
            .iter()
            .flat_map(|it| it.dataset.groups.iter().map(GroupData::n_obs))
            .max()
            .unwrap_or(0);

        let mut global = Array2::zeros((b, d_g));
        let mut local = Array3::zeros((b, j_max, d_l));
        let mut observations = Array4::zeros((b, j_max, n_max, d_obs));
        let mut covariates = d_cov.map(|d| Array4::zeros((b, j_max, n_max, d)));
        let mut group_mask = Array2::zeros((b, j_max));
        let mut obs_mask = Array3::zeros((b, j_max, n_max));

        for (m, item) in items.iter().enumerate() {
            global
                .row_mut(m)
                .assign(&ArrayView1::from(&item.global.concat()));
            for (j, group) in item.dataset.groups.iter().enumerate() {
                let n = group.n_obs();
                group_mask[[m, j]] = 1;
                local
                    .slice_mut(s![m, j, ..])
                    .assign(&item.local.lambda.row(j));
                observations
                    .slice_mut(s![m, j, ..n, ..])
                    .assign(&group.observations);
                if let (Some(dst), Some(src)) = (covariates.as_mut(), group.covariates.as_ref()) {
                    dst.slice_mut(s![m, j, ..n, ..]).assign(src);
                }
                obs_mask.slice_mut(s![m, j, ..n]).fill(1);
            }
        }

        Ok(SimulationBatch {
            global,
            local,
            observations,
            covariates,
            group_mask,
            obs_mask,
            tau_dim: first.global.tau.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.global.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_groups(&self) -> usize {
        self.group_mask.ncols()
    }

    pub fn group_active(&self, item: usize, j: usize) -> bool {
        self.group_mask[[item, j]] == 1
    }

    pub fn group_view(&self, item: usize, j: usize) -> GroupView<'_> {
        GroupView {
            observations: self.observations.slice(s![item, j, .., ..]),
            covariates: self
                .covariates
                .as_ref()
                .map(|c| c.slice(s![item, j, .., ..])),
            mask: Some(self.obs_mask.slice(s![item, j, ..])),
        }
    }
}
