//! Self-describing JSON checkpoints.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::Tensor;
use super::{Model, ModelConfig, ModelContext};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "medrec-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub fingerprint: String,
    /// Epoch the parameters were taken from (1-based).
    pub epoch: usize,
    pub config: ModelConfig,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, fingerprint: &str, epoch: usize) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            fingerprint: fingerprint.into(),
            epoch,
            config: model.config.clone(),
            tensors: model.params.tensors().to_vec(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        serde_json::to_writer(&mut w, self)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint, refusing a different fingerprint when one is given.
    pub fn load(path: &Path, expected_fingerprint: Option<&str>) -> Result<Self> {
        let f = File::open(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact(path.display().to_string())
            } else {
                Error::io(path, e)
            }
        })?;
        let c: Checkpoint = serde_json::from_reader(BufReader::new(f))?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                c.format,
                c.version
            )));
        }
        if let Some(fp) = expected_fingerprint {
            if fp != c.fingerprint {
                return Err(Error::Config(format!(
                    "checkpoint fingerprint {} does not match run configuration {fp}",
                    c.fingerprint
                )));
            }
        }
        Ok(c)
    }

    pub fn into_model(self, context: ModelContext) -> Result<Model> {
        Model::from_parts(self.config, context, &self.tensors)
    }
}
