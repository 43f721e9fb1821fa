use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::joint::{JointConfig, JointModel};
use crate::spatial::{SpNetConfig, SpatialModel, Vocab};
use crate::train::{Model, ModelKind, JOINT_PREFIX, SPATIAL_PREFIX};

pub const CHECKPOINT_VERSION: &str = "1";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub dev_acc3: Option<f64>,
    #[serde(default)]
    pub tool_version: String,
    /// Free-form provenance, typically the resolved run configuration.
    #[serde(default)]
    pub run: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelConfig {
    spatial: SpNetConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    joint: Option<JointConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamRecord {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// On-disk model: one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointDoc {
    pub version: String,
    pub kind: String,
    config: ModelConfig,
    pub vocab: Vec<String>,
    params: BTreeMap<String, ParamRecord>,
    pub meta: CheckpointMeta,
}

fn records(store: &ParamStore, prefix: &str, out: &mut BTreeMap<String, ParamRecord>) {
    for (name, t) in store.iter() {
        out.insert(
            format!("{prefix}{name}"),
            ParamRecord {
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            },
        );
    }
}

impl CheckpointDoc {
    pub fn from_model(model: &Model, meta: CheckpointMeta) -> Self {
        let mut params = BTreeMap::new();
        let (config, vocab) = match model {
            Model::Spatial(m) => {
                records(&m.params, "", &mut params);
                (
                    ModelConfig {
                        spatial: m.config.clone(),
                        joint: None,
                    },
                    &m.vocab,
                )
            }
            Model::Joint(j) => {
                records(&j.spatial.params, SPATIAL_PREFIX, &mut params);
                records(&j.params, JOINT_PREFIX, &mut params);
                (
                    ModelConfig {
                        spatial: j.spatial.config.clone(),
                        joint: Some(j.config.clone()),
                    },
                    &j.spatial.vocab,
                )
            }
        };
        CheckpointDoc {
            version: CHECKPOINT_VERSION.to_string(),
            kind: model.kind().as_str().to_string(),
            config,
            vocab: vocab.tokens().to_vec(),
            params,
            meta,
        }
    }

    fn store(&self, prefix: &str) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for (name, rec) in &self.params {
            let Some(short) = name.strip_prefix(prefix) else { continue };
            let t = Tensor::new(rec.shape.clone(), rec.data.clone()).map_err(|e| {
                Error::Checkpoint(format!("parameter {name}: {e}"))
            })?;
            store.insert(short, t)?;
        }
        Ok(store)
    }

    pub fn into_model(self) -> Result<Model> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {:?} (expected {CHECKPOINT_VERSION:?})",
                self.version
            )));
        }
        let kind: ModelKind = self
            .kind
            .parse()
            .map_err(|_| Error::Checkpoint(format!("unknown model kind {:?}", self.kind)))?;
        let vocab = Vocab::from_tokens(self.vocab.clone())?;
        let spatial_cfg = self.config.spatial.clone();
        match kind {
            ModelKind::Spnet | ModelKind::SpnetAblation => {
                let params = self.store("")?;
                Ok(Model::Spatial(SpatialModel::from_parts(
                    spatial_cfg,
                    vocab,
                    params,
                    kind == ModelKind::SpnetAblation,
                )?))
            }
            ModelKind::Joint => {
                let joint_cfg = self
                    .config
                    .joint
                    .clone()
                    .ok_or_else(|| Error::Checkpoint("joint checkpoint without joint config".into()))?;
                let spatial = SpatialModel::from_parts(spatial_cfg, vocab, self.store(SPATIAL_PREFIX)?, false)?;
                Ok(Model::Joint(JointModel::from_parts(joint_cfg, spatial, self.store(JOINT_PREFIX)?)?))
            }
        }
    }
}

pub fn save_checkpoint(doc: &CheckpointDoc, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, doc).map_err(|e| Error::Checkpoint(e.to_string()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(reader: impl Read) -> Result<(Model, CheckpointMeta)> {
    let doc: CheckpointDoc = serde_json::from_reader(reader).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("checkpoint: {e}"),
    })?;
    let meta = doc.meta.clone();
    Ok((doc.into_model()?, meta))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, CheckpointMeta)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}
