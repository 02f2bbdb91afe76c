//! Dataset files: one JSON document per dataset. Floats are written with 17
//! significant digits so files round-trip bit-exactly.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, GroupData, SimItem};
use crate::error::{Error, Result};

/// JSON formatter that writes every float as `d.dddddddddddddddde±x`.
#[derive(Clone, Copy, Debug, Default)]
pub struct PreciseFormatter;

impl serde_json::ser::Formatter for PreciseFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        write!(writer, "{:.16e}", value as f64)
    }
}

/// Serializes with [`PreciseFormatter`]. Non-finite floats become `null`,
/// so callers check finiteness first where it matters.
pub fn to_precise_json<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, PreciseFormatter);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(out).expect("serde_json emits utf-8"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Truth {
    pub tau: Vec<f64>,
    pub omega: Vec<f64>,
    pub lambda: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub model: String,
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Truth>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupRecord {
    observations: Vec<Vec<f64>>,
    covariates: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    groups: Vec<GroupRecord>,
    meta: DatasetMeta,
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<Array2<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::argument(format!("{what}: ragged rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), ncols), flat)
        .map_err(|e| Error::argument(format!("{what}: {e}")))
}

impl Truth {
    pub fn from_item(item: &SimItem) -> Self {
        Truth {
            tau: item.global.tau.clone(),
            omega: item.global.omega.clone(),
            lambda: to_rows(&item.local.lambda),
        }
    }
}

pub fn dataset_to_json(dataset: &Dataset, meta: &DatasetMeta) -> Result<String> {
    if dataset
        .groups
        .iter()
        .any(|g| g.observations.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::numeric("dataset contains non-finite observations"));
    }
    let file = DatasetFile {
        groups: dataset
            .groups
            .iter()
            .map(|g| GroupRecord {
                observations: to_rows(&g.observations),
                covariates: g.covariates.as_ref().map(to_rows),
            })
            .collect(),
        meta: meta.clone(),
    };
    to_precise_json(&file)
}

pub fn dataset_from_json(text: &str) -> Result<(Dataset, DatasetMeta)> {
    let file: DatasetFile = serde_json::from_str(text)?;
    if file.groups.is_empty() {
        return Err(Error::argument("dataset has no groups"));
    }
    let groups = file
        .groups
        .iter()
        .enumerate()
        .map(|(j, g)| {
            let obs = from_rows(&g.observations, &format!("group {j} observations"))?;
            let cov = g
                .covariates
                .as_ref()
                .map(|c| from_rows(c, &format!("group {j} covariates")))
                .transpose()?;
            GroupData::new(obs, cov)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((Dataset { groups }, file.meta))
}

pub fn write_dataset(path: &Path, dataset: &Dataset, meta: &DatasetMeta) -> Result<()> {
    std::fs::write(path, dataset_to_json(dataset, meta)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<(Dataset, DatasetMeta)> {
    dataset_from_json(&std::fs::read_to_string(path)?)
}
