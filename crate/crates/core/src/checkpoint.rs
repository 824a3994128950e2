//! Checkpoint directories: `checkpoint.json` plus one tensor file per layer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::masknet::{MaskNet, MaskNetConfig, LAYERS};
use crate::tensorfile::{encode, read_tensor};

pub const FORMAT: &str = "beamlearn-checkpoint-1";
pub const INDEX_FILE: &str = "checkpoint.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointIndex {
    pub format: String,
    /// CRC32 of all layer files (without their trailers), in hex.
    pub id: String,
    pub network: MaskNetConfig,
    pub layers: Vec<LayerEntry>,
    /// Training configuration in `key = value` form, when known.
    #[serde(default)]
    pub train_config: Option<String>,
    #[serde(default)]
    pub steps: usize,
}

/// A tensor file without its CRC trailer. Hashing whole files would not
/// work: a CRC over data followed by its own CRC is a constant.
fn file_body(bytes: &[u8]) -> &[u8] {
    &bytes[..bytes.len() - 4]
}

/// Content id of a network's parameters.
pub fn checkpoint_id(net: &MaskNet) -> String {
    let mut h = crc32fast::Hasher::new();
    for p in &net.params {
        h.update(file_body(&encode(p)));
    }
    format!("{:08x}", h.finalize())
}

/// Writes `net` into `dir` (created if needed) and returns the checkpoint id.
pub fn save_checkpoint(dir: impl AsRef<Path>, net: &MaskNet, train_config: Option<String>, steps: usize) -> Result<String> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut layers = Vec::with_capacity(LAYERS.len());
    let mut h = crc32fast::Hasher::new();
    for (name, p) in LAYERS.iter().zip(&net.params) {
        let file = format!("{name}.btf");
        let bytes = encode(p);
        h.update(file_body(&bytes));
        std::fs::write(dir.join(&file), bytes)?;
        layers.push(LayerEntry {
            name: name.to_string(),
            file,
            shape: p.shape().to_vec(),
        });
    }
    let id = format!("{:08x}", h.finalize());
    let index = CheckpointIndex {
        format: FORMAT.into(),
        id: id.clone(),
        network: net.config,
        layers,
        train_config,
        steps,
    };
    std::fs::write(dir.join(INDEX_FILE), serde_json::to_string_pretty(&index)? + "\n")?;
    Ok(id)
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(MaskNet, CheckpointIndex)> {
    let dir = dir.as_ref();
    let text = std::fs::read_to_string(dir.join(INDEX_FILE))?;
    let index: CheckpointIndex = serde_json::from_str(&text)?;
    if index.format != FORMAT {
        bail!(Format, "unsupported checkpoint format {:?}", index.format);
    }
    if index.layers.len() != LAYERS.len() || index.layers.iter().zip(LAYERS).any(|(l, n)| l.name != n) {
        bail!(Format, "checkpoint layers do not match the network layout");
    }
    let params = index
        .layers
        .iter()
        .map(|l| read_tensor(dir.join(&l.file)))
        .collect::<Result<Vec<_>>>()?;
    let net = MaskNet::from_params(index.network, params)?;
    if checkpoint_id(&net) != index.id {
        bail!(Format, "checkpoint id mismatch");
    }
    Ok((net, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masknet::Activation;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let net = MaskNet::new(MaskNetConfig::new(5, Activation::Sigmoid), 3);
        let id = save_checkpoint(dir.path(), &net, Some("steps = 1\n".into()), 1).unwrap();
        let (back, index) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, net);
        assert_eq!(index.id, id);
        assert_eq!(id, checkpoint_id(&net));
    }
}
