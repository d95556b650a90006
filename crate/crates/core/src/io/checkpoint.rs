//! Checkpoint payload: length-prefixed JSON metadata, a tensor count, then
//! `(name, shape, values)` triples in name order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::envelope::{self, ByteReader, ByteWriter};
use crate::error::{G5Error, Result};
use crate::model::{GraphSlot, ModelConfig, ModelState};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"G5CK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Where in the training schedule the checkpoint was taken.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulePosition {
    /// Rounds fully completed.
    pub round: usize,
    pub graph: Option<String>,
    pub task: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub universal_k: usize,
    pub model: ModelConfig,
    pub graphs: BTreeMap<String, GraphSlot>,
    pub position: SchedulePosition,
    /// Tasks each graph has been trained on so far.
    pub trained_tasks: BTreeMap<String, Vec<String>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn from_state(
        state: &ModelState,
        position: SchedulePosition,
        trained_tasks: BTreeMap<String, Vec<String>>,
    ) -> Self {
        Checkpoint {
            meta: CheckpointMeta {
                seed: state.seed,
                universal_k: state.universal_k,
                model: state.config.clone(),
                graphs: state.graphs().clone(),
                position,
                trained_tasks,
            },
            tensors: state.named_tensors(),
        }
    }

    pub fn to_state(&self) -> Result<ModelState> {
        ModelState::from_parts(
            self.meta.model.clone(),
            self.meta.universal_k,
            self.meta.seed,
            self.meta.graphs.clone(),
            self.tensors.clone(),
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        let meta = serde_json::to_vec(&self.meta)
            .map_err(|e| G5Error::Integrity(format!("cannot encode metadata: {e}")))?;
        w.bytes(&meta);
        w.u64(self.tensors.len() as u64);
        for (name, t) in &self.tensors {
            w.str(name);
            w.tensor(t);
        }
        Ok(envelope::seal(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, &w.into_inner()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let payload = envelope::open(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, bytes)?;
        let mut r = ByteReader::new(payload);
        let meta: CheckpointMeta = serde_json::from_slice(r.bytes()?)
            .map_err(|e| G5Error::Integrity(format!("bad checkpoint metadata: {e}")))?;
        let n = r.u64()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..n {
            let name = r.str()?;
            let t = r.tensor()?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(G5Error::Integrity(format!("duplicate tensor '{name}'")));
            }
        }
        if !r.is_done() {
            return Err(G5Error::Integrity("trailing bytes after checkpoint payload".into()));
        }
        Ok(Checkpoint { meta, tensors })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    envelope::write_atomic(path, &checkpoint.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| G5Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
