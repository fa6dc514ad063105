use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureSpec, Mvstm, ParamMap, TrainConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: &str = "mvstm-checkpoint/1";

/// On-disk model: the configuration it was trained with, where its spatial
/// features came from, the input spec and every parameter array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    pub config: TrainConfig,
    pub graph2vec_ref: Option<String>,
    pub spec: FeatureSpec,
    pub params: ParamMap,
}

impl Checkpoint {
    pub fn new(model: &Mvstm, graph2vec_ref: Option<String>) -> Self {
        Self {
            version: CHECKPOINT_VERSION.to_string(),
            config: model.config.clone(),
            graph2vec_ref,
            spec: model.spec.clone(),
            params: model.params.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("not valid JSON: {e}")))?;
        let version = raw.get("version").and_then(|v| v.as_str()).unwrap_or("<missing>");
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "version `{version}` is not supported (expected `{CHECKPOINT_VERSION}`)"
            )));
        }
        let ckpt: Checkpoint = serde_json::from_value(raw).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ckpt.check_shapes()?;
        Ok(ckpt)
    }

    /// Rebuilds the model after checking every parameter against the shapes
    /// its configuration implies.
    pub fn into_model(self) -> Result<Mvstm> {
        self.check_shapes()?;
        Ok(Mvstm {
            config: self.config,
            spec: self.spec,
            params: self.params,
        })
    }

    fn check_shapes(&self) -> Result<()> {
        let expected = Mvstm::init(&self.config, self.spec.clone()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        for (name, t) in &expected.params {
            match self.params.get(name) {
                None => return Err(Error::Checkpoint(format!("parameter `{name}` is missing"))),
                Some(p) if p.shape() != t.shape() => {
                    return Err(Error::Checkpoint(format!(
                        "parameter `{name}` has shape {:?}, expected {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                Some(p) if !p.is_finite() => {
                    return Err(Error::Checkpoint(format!("parameter `{name}` is not finite")))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self.params.keys().find(|k| !expected.params.contains_key(*k)) {
            return Err(Error::Checkpoint(format!("unexpected parameter `{extra}`")));
        }
        Ok(())
    }
}

pub fn save_checkpoint(model: &Mvstm, graph2vec_ref: Option<String>, path: &Path) -> Result<()> {
    std::fs::write(path, Checkpoint::new(model, graph2vec_ref).to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text)
}
