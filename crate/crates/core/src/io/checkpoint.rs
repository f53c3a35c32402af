//! One JSON checkpoint envelope for everything with flat parameters:
//! operators, denoisers, discriminators. The envelope stores the kind tag,
//! the config that shaped the parameter vector, and the vector itself.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Stable tag naming what the parameters belong to, e.g. an operator's
    /// `kind()` or `"denoiser"`.
    pub kind: String,
    /// The configuration the parameters were trained under, embedded as
    /// JSON so one envelope serves every model family.
    pub config: serde_json::Value,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(kind: &str, config: &impl Serialize, params: Vec<f64>) -> Result<Self> {
        let config = serde_json::to_value(config)
            .map_err(|e| Error::invalid(format!("checkpoint config: {e}")))?;
        Ok(Checkpoint { version: CHECKPOINT_VERSION, kind: kind.to_string(), config, params })
    }

    /// Deserialize the embedded config into its concrete type.
    pub fn config_as<T: DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.config.clone())
            .map_err(|e| Error::invalid(format!("checkpoint config: {e}")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::invalid(format!(
                "checkpoint holds '{}' parameters, expected '{kind}'",
                self.kind
            )));
        }
        Ok(())
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let text = serde_json::to_string_pretty(ckpt)
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    std::fs::write(path, text + "\n")
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::invalid(format!(
            "{}: checkpoint version {} unsupported (want {CHECKPOINT_VERSION})",
            path.display(),
            ckpt.version
        )));
    }
    if ckpt.params.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite(format!("{}: checkpoint parameters", path.display())));
    }
    Ok(ckpt)
}
