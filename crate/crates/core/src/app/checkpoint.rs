use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{checksum_map, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::ligand::FragmentLibrary;
use crate::policy::{ModelConfig, PolicyNet};
use crate::reward::RewardFn;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub max_nodes: usize,
    pub library: FragmentLibrary,
    pub reward: RewardFn,
    pub seed: u64,
    pub steps: usize,
}

/// Parameters plus everything needed to rebuild the network around them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub meta: CheckpointMeta,
    pub params: BTreeMap<String, Tensor>,
    pub checksum: String,
}

fn digest(meta: &CheckpointMeta, params: &BTreeMap<String, Tensor>) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(meta)?);
    h.update(checksum_map(params).as_bytes());
    Ok(hex::encode(h.finalize()))
}

impl Checkpoint {
    pub fn new(meta: CheckpointMeta, store: &ParamStore) -> Result<Self> {
        let params = store.to_map();
        let checksum = digest(&meta, &params)?;
        Ok(Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            meta,
            params,
            checksum,
        })
    }

    pub fn verify(&self) -> Result<()> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                self.format_version
            )));
        }
        let actual = digest(&self.meta, &self.params)?;
        if actual != self.checksum {
            return Err(Error::Checkpoint(format!(
                "checksum mismatch: recorded {}, computed {actual}",
                self.checksum
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut text = serde_json::to_string(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        ck.verify()?;
        Ok(ck)
    }

    /// Rebuilds the network and loads the stored values; shapes must match exactly.
    pub fn restore(&self) -> Result<(PolicyNet, ParamStore)> {
        self.verify()?;
        let mut store = ParamStore::new(self.meta.seed);
        let policy = PolicyNet::new(&mut store, &self.meta.library, self.meta.model.clone())?;
        store.load_map(&self.params)?;
        Ok((policy, store))
    }
}
