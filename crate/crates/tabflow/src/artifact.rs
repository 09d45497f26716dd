//! The `model.bin` format: an 8-byte magic, a little-endian `u32` format
//! version, then the bundle as JSON with round-trip-exact floats.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tabflow_core::data::Preprocessor;
use tabflow_core::model::DensityModel;

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"TABFLOW\0";
pub const FORMAT_VERSION: u32 = 1;

/// A trained model together with the preprocessing it expects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub model: DensityModel,
    pub preprocessor: Preprocessor,
}

impl ModelBundle {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        serde_json::to_writer(&mut out, self).expect("plain data serializes");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let body = bytes
            .strip_prefix(MAGIC.as_slice())
            .ok_or("not a model file (bad magic)")?;
        if body.len() < 4 {
            return Err("truncated header".into());
        }
        let version = u32::from_le_bytes(body[..4].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            ));
        }
        serde_json::from_slice(&body[4..]).map_err(|e| format!("corrupt model body: {e}"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| CliError::output(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::input(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| CliError::input(path, e))
    }
}
