//! Config files and their precedence: command-line flag, then config file,
//! then built-in default.

use std::path::{Path, PathBuf};

use hierflow::training::TrainConfig;
use hierflow::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "HIERFLOW_SEED";

/// Reads a config file. A previous `run.json` is accepted too, in which
/// case its effective config is used.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>, command: &str) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if let Some(obj) = value.as_object() {
        if obj.contains_key("command") && obj.contains_key("config") {
            let recorded = obj["command"].as_str().unwrap_or_default();
            if recorded != command {
                return Err(Error::Config(format!(
                    "{} records a `{recorded}` run, not `{command}`",
                    path.display()
                )));
            }
            value = obj["config"].clone();
        }
    }
    serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn pick<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

pub fn require<T>(value: Option<T>, field: &str) -> Result<T> {
    value.ok_or_else(|| {
        Error::Config(format!(
            "missing required field `{field}` (set --{} or \"{field}\" in the config file)",
            field.replace('_', "-")
        ))
    })
}

/// Flag, then config file, then `$HIERFLOW_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub model: Option<String>,
    pub n: Option<usize>,
    pub groups: Option<usize>,
    pub obs: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    pub model: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub train: Option<TrainConfig>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub draws: Option<usize>,
    pub allow_out_of_range: Option<bool>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbcConfig {
    pub checkpoint: Option<PathBuf>,
    pub sims: Option<usize>,
    pub draws: Option<usize>,
    pub gamma: Option<f64>,
    pub band_reps: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogoConfig {
    pub checkpoint: Option<PathBuf>,
    pub compare: Option<String>,
    pub data: Option<PathBuf>,
    pub draws: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_name_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"model": "air-traffic", "nn": 3}"#).unwrap();
        let err = load::<SimulateConfig>(Some(&p), "simulate").unwrap_err().to_string();
        assert!(err.contains("nn"), "{err}");
    }

    #[test]
    fn run_json_is_accepted_for_the_same_command() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        std::fs::write(&p, r#"{"command": "simulate", "config": {"n": 4}}"#).unwrap();
        let c: SimulateConfig = load(Some(&p), "simulate").unwrap();
        assert_eq!(c.n, Some(4));
        assert!(load::<SimulateConfig>(Some(&p), "train").is_err());
    }

    #[test]
    fn partial_train_config_uses_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"train": {"epochs": 3}}"#).unwrap();
        let c: TrainRunConfig = load(Some(&p), "train").unwrap();
        let t = c.train.unwrap();
        assert_eq!(t.epochs, 3);
        assert_eq!(t.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn flags_win_over_files() {
        assert_eq!(pick(Some(1), Some(2)), Some(1));
        assert_eq!(pick(None, Some(2)), Some(2));
        assert_eq!(resolve_seed(Some(5), Some(6)).unwrap(), 5);
        assert_eq!(resolve_seed(None, Some(6)).unwrap(), 6);
    }
}
