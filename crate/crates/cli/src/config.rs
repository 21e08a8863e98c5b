//! Flat JSON configs: defaults, then the config file, then flags.

use std::path::PathBuf;

use kmshrink::experiments::KpcaBenchConfig;
use kmshrink::model_selection::SearchConfig;
use kmshrink::operators::Level2;
use kmshrink::oracle::ProtocolConfig;
use kmshrink::{EstimatorKind, KernelConfig, KernelFamily};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::ingest::CsvOptions;
use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KpcaCommandConfig {
    #[serde(flatten)]
    pub bench: KpcaBenchConfig,
    /// Dataset file. Without one, `synthetic_n` points are drawn from a
    /// random mixture built from the protocol keys and the seed.
    pub data: Option<PathBuf>,
    #[serde(flatten)]
    pub csv: CsvOptions,
    pub synthetic_n: usize,
    #[serde(flatten)]
    pub protocol: ProtocolConfig,
}

impl Default for KpcaCommandConfig {
    fn default() -> Self {
        Self {
            bench: KpcaBenchConfig::default(),
            data: None,
            csv: CsvOptions::default(),
            synthetic_n: 100,
            protocol: ProtocolConfig::with_dim(10),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateConfig {
    pub data: Option<PathBuf>,
    #[serde(flatten)]
    pub csv: CsvOptions,
    pub normalize: bool,
    pub kernel: KernelConfig,
    pub estimator: EstimatorKind,
    /// Fixed shrinkage; leave-one-out selection when absent.
    pub lambda: Option<f64>,
    pub search: SearchConfig,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            data: None,
            csv: CsvOptions::default(),
            normalize: false,
            kernel: KernelConfig::new(KernelFamily::Rbf),
            estimator: EstimatorKind::SKmse,
            lambda: None,
            search: SearchConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileConfig {
    pub data: Option<PathBuf>,
    #[serde(flatten)]
    pub csv: CsvOptions,
    pub normalize: bool,
    pub kernel: KernelConfig,
    pub estimator: EstimatorKind,
    pub search: SearchConfig,
    /// Also score every grid point with the direct fixed-point solver.
    pub naive: bool,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            data: None,
            csv: CsvOptions::default(),
            normalize: false,
            kernel: KernelConfig::new(KernelFamily::Rbf),
            estimator: EstimatorKind::FKmse,
            search: SearchConfig::default(),
            naive: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistGramConfig {
    pub data: Option<PathBuf>,
    #[serde(flatten)]
    pub csv: CsvOptions,
    pub normalize: bool,
    pub kernel: KernelConfig,
    pub estimator: EstimatorKind,
    pub level2: Level2,
}

impl Default for DistGramConfig {
    fn default() -> Self {
        Self {
            data: None,
            csv: CsvOptions {
                group_column: Some("1".into()),
                ..CsvOptions::default()
            },
            normalize: false,
            kernel: KernelConfig::new(KernelFamily::Rbf),
            estimator: EstimatorKind::SKmse,
            level2: Level2::Linear,
        }
    }
}

/// Reads a config file into a JSON object.
pub fn load_file(path: &std::path::Path) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(CliError::Config(format!("{}: expected a JSON object", path.display()))),
        Err(e) => Err(CliError::Config(format!("{}: {e}", path.display()))),
    }
}

/// Layers `file` and then `overrides` over the defaults of `T`. Keys that
/// `T` does not know are rejected.
pub fn merge<T>(file: Option<Map<String, Value>>, overrides: Map<String, Value>) -> Result<T, CliError>
where
    T: Default + Serialize + DeserializeOwned,
{
    let Value::Object(mut map) = serde_json::to_value(T::default())? else {
        unreachable!("configs serialize to objects")
    };
    for (key, value) in file.into_iter().flatten().chain(overrides) {
        if !map.contains_key(&key) {
            let mut known: Vec<&str> = map.keys().map(String::as_str).collect();
            known.sort_unstable();
            return Err(CliError::Config(format!(
                "unknown config key {key:?}; known keys: {}",
                known.join(", ")
            )));
        }
        map.insert(key, value);
    }
    serde_json::from_value(Value::Object(map)).map_err(|e| CliError::Config(e.to_string()))
}

/// Parses a `--set key=value` value: JSON when it parses, a string otherwise.
pub fn parse_assignment(s: &str) -> Result<(String, Value), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use kmshrink::experiments::NdSweepConfig;
    use serde_json::json;

    #[test]
    fn flag_beats_file_beats_default() {
        let file = json!({"trials": 5, "seed": 3}).as_object().unwrap().clone();
        let flags = json!({"trials": 7}).as_object().unwrap().clone();
        let cfg: NdSweepConfig = merge(Some(file), flags).unwrap();
        assert_eq!((cfg.trials, cfg.seed), (7, 3));
        assert_eq!(cfg.n_grid, NdSweepConfig::default().n_grid);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let file = json!({"trails": 5}).as_object().unwrap().clone();
        let err = merge::<NdSweepConfig>(Some(file), Map::new()).unwrap_err();
        assert!(err.to_string().contains("trails"));
    }

    #[test]
    fn effective_configs_replay() {
        let cfg: KpcaCommandConfig = merge(None, Map::new()).unwrap();
        let Value::Object(echo) = serde_json::to_value(&cfg).unwrap() else { panic!() };
        let again: KpcaCommandConfig = merge(Some(echo), Map::new()).unwrap();
        assert_eq!(cfg, again);
        let est: EstimateConfig = merge(None, Map::new()).unwrap();
        assert_eq!(est, EstimateConfig::default());
        let dg: DistGramConfig = merge(None, Map::new()).unwrap();
        assert_eq!(dg, DistGramConfig::default());
    }

    #[test]
    fn assignments() {
        assert_eq!(parse_assignment("n=4").unwrap(), ("n".into(), json!(4)));
        assert_eq!(parse_assignment("kernel=rbf:2").unwrap(), ("kernel".into(), json!("rbf:2")));
        assert!(parse_assignment("oops").is_err());
    }
}
