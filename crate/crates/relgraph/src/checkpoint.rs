//! Single-file checkpoints: a provenance comment line followed by JSON
//! holding the run config, every named parameter, the Adam moments, and
//! the step counter. Floats use shortest round-trip formatting on write and
//! exact parsing on read, so a save/load cycle is bit-exact.

use std::path::Path;

use relgraph_core::ModelState;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::provenance;

const FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub config: RunConfig,
    pub state: ModelState,
}

impl Checkpoint {
    pub fn new(config: RunConfig, state: ModelState) -> Self {
        Self { format: FORMAT, config, state }
    }

    pub fn to_text(&self) -> Result<String> {
        let json = serde_json::to_string(self).map_err(|e| Error::Numeric(format!("cannot encode checkpoint: {e}")))?;
        Ok(format!("{}\n{json}\n", provenance(&self.config.hash(), self.config.seed)))
    }

    pub fn from_text(text: &str, what: &str) -> Result<Self> {
        let body: String = text.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
        let ckpt: Checkpoint = serde_json::from_str(&body).map_err(|e| Error::Data(format!("{what}: not a checkpoint: {e}")))?;
        if ckpt.format != FORMAT {
            return Err(Error::Data(format!("{what}: checkpoint format {} is not supported", ckpt.format)));
        }
        let s = &ckpt.state;
        if s.optimizer.m.len() != s.params.len() || s.optimizer.v.len() != s.params.len() {
            return Err(Error::Data(format!("{what}: optimizer moments do not match the parameters")));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::from_text(&text, &path.display().to_string())
    }
}
