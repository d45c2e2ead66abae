//! The single JSON configuration shared by every stage, with dotted-path
//! overrides and a content hash recorded in output manifests.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::candidates::{GpgConfig, Heuristic4DofConfig};
use crate::cloud::PreprocessConfig;
use crate::eval::EvalConfig;
use crate::graph::GraphConfig;
use crate::gripper::GripperGeometry;
use crate::oracle::OracleConfig;
use crate::pipeline::GeneratorMode;
use crate::scene::{RenderConfig, SceneGenConfig};
use crate::train::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub gripper: GripperGeometry,
    pub scenes: SceneGenConfig,
    pub render: RenderConfig,
    pub preprocess: PreprocessConfig,
    pub generator: GeneratorMode,
    pub gpg: GpgConfig,
    pub heuristic4dof: Heuristic4DofConfig,
    pub graph: GraphConfig,
    pub oracle: OracleConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            gripper: GripperGeometry::default(),
            scenes: SceneGenConfig::default(),
            render: RenderConfig::default(),
            preprocess: PreprocessConfig {
                // Keeps the table around the synthetic workspace and drops the rest.
                workspace: Some([-0.2, -0.2, -0.01, 0.2, 0.2, 0.3]),
                ..PreprocessConfig::default()
            },
            generator: GeneratorMode::default(),
            gpg: GpgConfig::default(),
            heuristic4dof: Heuristic4DofConfig::default(),
            graph: GraphConfig::default(),
            oracle: OracleConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.gripper.validate()?;
        self.scenes.validate()?;
        self.render.validate()?;
        self.preprocess.validate()?;
        self.gpg.validate()?;
        self.heuristic4dof.validate()?;
        self.graph.validate()?;
        self.oracle.validate()?;
        self.train.validate()?;
        self.eval.validate()
    }

    pub fn from_json(text: &str) -> Result<PipelineConfig> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PipelineConfig::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Pretty JSON with sections in declaration order.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&compact).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Applies `key.path=value` overrides. Values parse as JSON and fall back
    /// to plain strings, so `generator=gpg` and `train.epochs=20` both work.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<PipelineConfig> {
        let mut root = serde_json::to_value(self).expect("config serializes");
        for o in overrides {
            let o = o.as_ref();
            let (path, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not of the form key.path=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut node = &mut root;
            for key in path.split('.') {
                node = match node {
                    Value::Object(map) => map
                        .get_mut(key)
                        .ok_or_else(|| Error::Config(format!("unknown config key `{path}`")))?,
                    Value::Array(items) => {
                        let i: usize = key
                            .parse()
                            .map_err(|_| Error::Config(format!("`{key}` in `{path}` is not an array index")))?;
                        let len = items.len();
                        items
                            .get_mut(i)
                            .ok_or_else(|| Error::Config(format!("index {i} out of range ({len}) in `{path}`")))?
                    }
                    _ => return Err(Error::Config(format!("`{path}` descends into a scalar"))),
                };
            }
            *node = value;
        }
        let cfg: PipelineConfig = serde_json::from_value(root).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
