//! Versioned JSON checkpoints: tensor name, shape and row-major values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cells::ParamSet;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub variant: String,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn new(variant: &str, params: ParamSet) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            variant: variant.into(),
            params,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                path: path.display().to_string(),
                detail: format!("unsupported checkpoint version {}", ck.version),
            });
        }
        for t in &ck.params.tensors {
            if t.shape.iter().product::<usize>() != t.values.len() {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    detail: format!("tensor {} has shape {:?} but {} values", t.name, t.shape, t.values.len()),
                });
            }
        }
        Ok(ck)
    }
}
