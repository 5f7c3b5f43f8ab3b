//! The JSON run config for `train`: training hyperparameters, model shape for
//! fresh runs, and an optional validation set.

use std::path::{Path, PathBuf};

use mtl_affect::anfl::{DEFAULT_K, DEFAULT_NODE_DIM};
use mtl_affect::heads::DEFAULT_ATTN_DIM;
use mtl_affect::training::TrainConfig;
use mtl_affect::{Error, Result};
use serde::Deserialize;
use serde_json::Value;

const TRAIN_KEYS: [&str; 10] = [
    "lr0",
    "lr_min",
    "epochs",
    "batch_size",
    "weight_decay",
    "sam_rho",
    "momentum",
    "seed",
    "stage",
    "freeze",
];
const MODEL_KEYS: [&str; 6] = ["node_dim", "attn_dim", "k", "attention", "batchnorm", "init_seed"];

/// Shape of a freshly initialized model. Ignored when training starts from a checkpoint.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub node_dim: usize,
    pub attn_dim: usize,
    pub k: usize,
    pub attention: bool,
    pub batchnorm: bool,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            node_dim: DEFAULT_NODE_DIM,
            attn_dim: DEFAULT_ATTN_DIM,
            k: DEFAULT_K,
            attention: true,
            batchnorm: true,
            init_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: Option<ModelConfig>,
    pub val_data: Option<PathBuf>,
    /// Whether the document set `stage` itself.
    pub explicit_stage: bool,
}

fn unknown_keys(obj: &serde_json::Map<String, Value>, allowed: &[&str], prefix: &str) -> Vec<String> {
    obj.keys()
        .filter(|k| !allowed.contains(&k.as_str()))
        .map(|k| format!("{prefix}{k}"))
        .collect()
}

impl RunConfig {
    /// Parses the document; every unknown key is reported in one error.
    pub fn parse(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        let Value::Object(mut obj) = value else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let mut top_allowed: Vec<&str> = TRAIN_KEYS.to_vec();
        top_allowed.extend(["model", "val_data"]);
        let mut unknown = unknown_keys(&obj, &top_allowed, "");
        if let Some(Value::Object(m)) = obj.get("model") {
            unknown.extend(unknown_keys(m, &MODEL_KEYS, "model."));
        }
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown config keys: {}", unknown.join(", "))));
        }
        let model = obj
            .remove("model")
            .map(|m| serde_json::from_value::<ModelConfig>(m).map_err(|e| Error::Config(format!("model: {e}"))))
            .transpose()?;
        let val_data = obj
            .remove("val_data")
            .map(|v| serde_json::from_value::<PathBuf>(v).map_err(|e| Error::Config(format!("val_data: {e}"))))
            .transpose()?;
        let explicit_stage = obj.contains_key("stage");
        let train: TrainConfig = serde_json::from_value(Value::Object(obj)).map_err(|e| Error::Config(e.to_string()))?;
        train.validate()?;
        Ok(Self {
            train,
            model,
            val_data,
            explicit_stage,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use mtl_affect::data::Task;

    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = RunConfig::parse(r#"{"epochs": 3, "stage": "ex", "model": {"k": 2}}"#).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.stage, Task::Ex);
        assert_eq!(c.model.unwrap().k, 2);
        assert_eq!(c.val_data, None);
        assert_eq!(RunConfig::parse("{}").unwrap().train, TrainConfig::default());
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let err = RunConfig::parse(r#"{"lr": 1, "epochs": 1, "model": {"depth": 2}, "zzz": 0}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("lr") && msg.contains("zzz") && msg.contains("model.depth"), "{msg}");
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(matches!(RunConfig::parse(r#"{"batch_size": 1}"#), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse(r#"{"lr0": "fast"}"#), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("[1]"), Err(Error::Config(_))));
    }
}
