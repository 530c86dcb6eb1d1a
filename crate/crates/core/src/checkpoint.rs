//! Versioned checkpoint archive: config echo, parameters, optimizer state,
//! epoch counter, and RNG state in one JSON document.

use crate::error::{Error, Result};
use crate::network::{Model, NetworkConfig};
use crate::params::{BufferStore, ParamStore, SgdMomentum};
use crate::scalar::Scalar;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const FORMAT_TAG: &str = "dbifaunet-ckpt-v1";

#[derive(Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Checkpoint<S: Scalar> {
    pub format: String,
    pub network: NetworkConfig,
    pub epoch: usize,
    pub best_val_dice: f64,
    pub params: ParamStore<S>,
    pub buffers: BufferStore<S>,
    pub optimizer: SgdMomentum<S>,
    pub rng: ChaCha8Rng,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn new(
        model: &Model<S>,
        optimizer: &SgdMomentum<S>,
        rng: &ChaCha8Rng,
        epoch: usize,
        best_val_dice: f64,
    ) -> Self {
        Checkpoint {
            format: FORMAT_TAG.to_string(),
            network: model.cfg,
            epoch,
            best_val_dice,
            params: model.store.clone(),
            buffers: model.buffers.clone(),
            optimizer: optimizer.clone(),
            rng: rng.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint<S> = serde_json::from_str(&text)?;
        if ckpt.format != FORMAT_TAG {
            return Err(Error::Checkpoint(format!(
                "unsupported format `{}`, expected `{FORMAT_TAG}`",
                ckpt.format
            )));
        }
        Ok(ckpt)
    }

    /// Rebuilds a model around the archived configuration and parameters.
    pub fn into_model(self) -> Result<(Model<S>, SgdMomentum<S>, ChaCha8Rng, usize, f64)> {
        let mut model = Model::build(self.network, 0)?;
        let expected: Vec<String> = model.store.names().cloned().collect();
        let got: Vec<String> = self.params.names().cloned().collect();
        if expected != got {
            let missing: Vec<_> = expected.iter().filter(|n| !got.contains(n)).collect();
            return Err(Error::Checkpoint(format!(
                "parameter set does not match the echoed config; missing {missing:?}"
            )));
        }
        model.store = self.params;
        model.buffers = self.buffers;
        Ok((model, self.optimizer, self.rng, self.epoch, self.best_val_dice))
    }
}
