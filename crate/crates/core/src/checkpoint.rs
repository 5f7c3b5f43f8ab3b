//! JSON checkpoints: dims, every parameter tensor, batchnorm running stats,
//! class weights, seeds and the stages trained so far.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Error, Result};
use crate::losses::ClassWeights;
use crate::math::BatchNormState;
use crate::model::{Architecture, ModelDims, ModelParams};
use crate::training::TrainConfig;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BnRunning {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub dims: ModelDims,
    pub architecture: Architecture,
    /// Seed the parameters were initialized from.
    pub init_seed: u64,
    pub stages_completed: Vec<Task>,
    /// Config of each completed stage, in order.
    pub configs: Vec<TrainConfig>,
    pub class_weights: ClassWeights,
    /// Row-major nested arrays keyed by parameter name.
    pub params: BTreeMap<String, Vec<Vec<f64>>>,
    pub batchnorm: Option<BnRunning>,
}

impl Checkpoint {
    pub fn new(params: &ModelParams, init_seed: u64, class_weights: ClassWeights) -> Self {
        let mut ck = Self {
            format_version: FORMAT_VERSION,
            dims: params.dims(),
            architecture: params.architecture(),
            init_seed,
            stages_completed: Vec::new(),
            configs: Vec::new(),
            class_weights,
            params: BTreeMap::new(),
            batchnorm: None,
        };
        ck.store(params);
        ck
    }

    /// Replaces the stored tensors and running statistics with `params`.
    pub fn store(&mut self, params: &ModelParams) {
        self.dims = params.dims();
        self.architecture = params.architecture();
        self.params = params
            .params()
            .into_iter()
            .map(|p| {
                let rows = p.data.chunks(p.shape.1.max(1)).map(<[f64]>::to_vec).collect();
                (p.name, rows)
            })
            .collect();
        self.batchnorm = params.heads.va_bn.as_ref().map(|bn| BnRunning {
            running_mean: bn.running_mean.clone(),
            running_var: bn.running_var.clone(),
            momentum: bn.momentum,
            eps: bn.eps,
        });
    }

    pub fn record_stage(&mut self, config: &TrainConfig) {
        self.stages_completed.push(config.stage);
        self.configs.push(config.clone());
    }

    pub fn has_stage(&self, task: Task) -> bool {
        self.stages_completed.contains(&task)
    }

    /// Rebuilds the model, checking every tensor's name and shape.
    pub fn to_model(&self) -> Result<ModelParams> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let mut model = ModelParams::init(self.dims, self.architecture, 0)
            .map_err(|e| Error::Checkpoint(format!("invalid dims: {e}")))?;
        let expected = model.shapes();
        for name in self.params.keys() {
            if !expected.contains_key(name) {
                return Err(Error::Checkpoint(format!("unexpected parameter {name:?}")));
            }
        }
        for slot in model.params_mut() {
            let rows = self
                .params
                .get(&slot.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {:?}", slot.name)))?;
            let (r, c) = slot.shape;
            if rows.len() != r || rows.iter().any(|row| row.len() != c) {
                let got_cols = rows.first().map_or(0, Vec::len);
                return Err(Error::Checkpoint(format!(
                    "parameter {:?} has shape {}x{got_cols}, expected {r}x{c}",
                    slot.name,
                    rows.len()
                )));
            }
            for (dst, src) in slot.data.iter_mut().zip(rows.iter().flatten()) {
                if !src.is_finite() {
                    return Err(Error::Checkpoint(format!("non-finite value in {:?}", slot.name)));
                }
                *dst = *src;
            }
        }
        match (&mut model.heads.va_bn, &self.batchnorm) {
            (Some(bn), Some(stored)) => {
                let w = bn.width();
                if stored.running_mean.len() != w || stored.running_var.len() != w {
                    return Err(Error::Checkpoint("batchnorm running stats have the wrong width".into()));
                }
                let restored = BatchNormState {
                    gamma: bn.gamma.clone(),
                    beta: bn.beta.clone(),
                    running_mean: stored.running_mean.clone(),
                    running_var: stored.running_var.clone(),
                    momentum: stored.momentum,
                    eps: stored.eps,
                };
                restored
                    .validate()
                    .map_err(|e| Error::Checkpoint(format!("batchnorm state: {e}")))?;
                *bn = restored;
            }
            (None, None) => {}
            _ => return Err(Error::Checkpoint("batchnorm state does not match the architecture".into())),
        }
        model.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ModelParams {
        let dims = ModelDims {
            input_dim: 6,
            node_dim: 3,
            attn_dim: 2,
            num_aus: 12,
            num_classes: 8,
            k: 3,
        };
        let mut m = ModelParams::init(dims, Architecture::default(), 5).unwrap();
        m.heads.va_bn.as_mut().unwrap().running_mean = vec![0.25, -0.5];
        m
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let mut ck = Checkpoint::new(&m, 5, ClassWeights::uniform(12, 8));
        ck.record_stage(&TrainConfig::new(Task::Au));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_model().unwrap(), m);
        assert!(back.has_stage(Task::Au) && !back.has_stage(Task::Ex));
        let again = dir.path().join("ck2.json");
        back.save(&again).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
    }

    #[test]
    fn shape_errors_are_reported() {
        let m = model();
        let mut ck = Checkpoint::new(&m, 5, ClassWeights::uniform(12, 8));
        ck.params.get_mut("ex.w").unwrap().pop();
        assert!(matches!(ck.to_model(), Err(Error::Checkpoint(_))));

        let mut ck = Checkpoint::new(&m, 5, ClassWeights::uniform(12, 8));
        ck.params.remove("attn.q");
        assert!(matches!(ck.to_model(), Err(Error::Checkpoint(_))));

        let mut ck = Checkpoint::new(&m, 5, ClassWeights::uniform(12, 8));
        ck.params.insert("extra".into(), vec![vec![1.0]]);
        assert!(matches!(ck.to_model(), Err(Error::Checkpoint(_))));

        let mut ck = Checkpoint::new(&m, 5, ClassWeights::uniform(12, 8));
        ck.batchnorm = None;
        assert!(matches!(ck.to_model(), Err(Error::Checkpoint(_))));
    }
}
