//! Reference models, addressable by string id.

pub mod air_traffic;
pub mod ddm;
pub mod mvn;
pub mod normal_normal;

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::generative::ModelSpec;
use crate::posterior::PosteriorSampler;

pub use air_traffic::{AirTraffic, AirTrafficConfig};
pub use ddm::{Ddm, DdmConfig};
pub use mvn::{MvnConfig, MvnHier};
pub use normal_normal::{AnalyticSampler, NormalNormal, NormalNormalConfig, NormalNormalOracle, Variant};

pub const MODEL_IDS: [&str; 6] = [
    "normal-normal-a",
    "normal-normal-b",
    "air-traffic",
    "ddm-shared",
    "ddm-hier",
    "mvn-hier",
];

/// Serializable model choice with its settings. Stored in checkpoints and
/// accepted as a custom spec file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum ModelConfig {
    NormalNormalA(NormalNormalConfig),
    NormalNormalB(NormalNormalConfig),
    AirTraffic(AirTrafficConfig),
    DdmShared(DdmConfig),
    DdmHier(DdmConfig),
    MvnHier(MvnConfig),
}

impl ModelConfig {
    pub fn from_id(id: &str) -> Result<Self> {
        Ok(match id {
            "normal-normal-a" => ModelConfig::NormalNormalA(Default::default()),
            "normal-normal-b" => ModelConfig::NormalNormalB(Default::default()),
            "air-traffic" => ModelConfig::AirTraffic(Default::default()),
            "ddm-shared" => ModelConfig::DdmShared(Default::default()),
            "ddm-hier" => ModelConfig::DdmHier(Default::default()),
            "mvn-hier" => ModelConfig::MvnHier(Default::default()),
            other => {
                return Err(Error::config(format!(
                    "unknown model `{other}` (known: {})",
                    MODEL_IDS.join(", ")
                )))
            }
        })
    }

    /// A zoo id, or a path to a JSON file holding a `ModelConfig`.
    pub fn resolve(id_or_path: &str) -> Result<Self> {
        if MODEL_IDS.contains(&id_or_path) {
            return Self::from_id(id_or_path);
        }
        let path = Path::new(id_or_path);
        if path.is_file() {
            let text = std::fs::read_to_string(path)?;
            let cfg: ModelConfig = serde_json::from_str(&text)
                .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
            cfg.build()?.validate()?;
            return Ok(cfg);
        }
        Self::from_id(id_or_path)
    }

    pub fn id(&self) -> &'static str {
        match self {
            ModelConfig::NormalNormalA(_) => "normal-normal-a",
            ModelConfig::NormalNormalB(_) => "normal-normal-b",
            ModelConfig::AirTraffic(_) => "air-traffic",
            ModelConfig::DdmShared(_) => "ddm-shared",
            ModelConfig::DdmHier(_) => "ddm-hier",
            ModelConfig::MvnHier(_) => "mvn-hier",
        }
    }

    pub fn build(&self) -> Result<Box<dyn ModelSpec>> {
        let spec: Box<dyn ModelSpec> = match self {
            ModelConfig::NormalNormalA(c) => Box::new(NormalNormal::new(Variant::A, c.clone())),
            ModelConfig::NormalNormalB(c) => Box::new(NormalNormal::new(Variant::B, c.clone())),
            ModelConfig::AirTraffic(c) => Box::new(AirTraffic::new(c.clone())),
            ModelConfig::DdmShared(c) => Box::new(Ddm::new(false, c.clone())),
            ModelConfig::DdmHier(c) => Box::new(Ddm::new(true, c.clone())),
            ModelConfig::MvnHier(c) => Box::new(MvnHier::new(c.clone())),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Exact posterior sampler, where one exists.
    pub fn oracle(&self) -> Option<Box<dyn PosteriorSampler>> {
        match self {
            ModelConfig::NormalNormalA(c) => Some(Box::new(AnalyticSampler {
                model: NormalNormal::new(Variant::A, c.clone()),
            })),
            ModelConfig::NormalNormalB(c) => Some(Box::new(AnalyticSampler {
                model: NormalNormal::new(Variant::B, c.clone()),
            })),
            _ => None,
        }
    }
}

/// A model together with its optional oracle and a parameter table.
pub struct ZooEntry {
    pub config: ModelConfig,
    pub spec: Box<dyn ModelSpec>,
    pub oracle: Option<Box<dyn PosteriorSampler>>,
}

impl ZooEntry {
    pub fn new(config: ModelConfig) -> Result<Self> {
        Ok(ZooEntry {
            spec: config.build()?,
            oracle: config.oracle(),
            config,
        })
    }

    /// `(name, level, transform)` rows for every unconstrained component.
    pub fn parameter_table(&self) -> Vec<(String, &'static str, String)> {
        let l = self.spec.layout();
        let row = |p: &crate::generative::ParamInfo, level| {
            (p.name.clone(), level, format!("{:?}", p.transform).to_lowercase())
        };
        l.tau
            .iter()
            .map(|p| row(p, "hyper"))
            .chain(l.omega.iter().map(|p| row(p, "shared")))
            .chain(l.local.iter().map(|p| row(p, "local")))
            .collect()
    }
}

pub fn zoo_entry(id: &str) -> Result<ZooEntry> {
    ZooEntry::new(ModelConfig::from_id(id)?)
}

pub fn normal_normal_spec(variant: Variant) -> ZooEntry {
    let cfg = match variant {
        Variant::A => ModelConfig::NormalNormalA(Default::default()),
        Variant::B => ModelConfig::NormalNormalB(Default::default()),
    };
    ZooEntry::new(cfg).expect("default config is valid")
}

pub fn air_traffic_spec() -> ZooEntry {
    ZooEntry::new(ModelConfig::AirTraffic(Default::default())).expect("default config is valid")
}

pub fn ddm_spec(hierarchical_beta: bool) -> ZooEntry {
    let cfg = if hierarchical_beta {
        ModelConfig::DdmHier(Default::default())
    } else {
        ModelConfig::DdmShared(Default::default())
    };
    ZooEntry::new(cfg).expect("default config is valid")
}

pub fn mvn_hier_spec() -> ZooEntry {
    ZooEntry::new(ModelConfig::MvnHier(Default::default())).expect("default config is valid")
}
