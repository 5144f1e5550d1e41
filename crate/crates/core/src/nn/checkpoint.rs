//! Checkpoints: a JSON manifest next to a flat little-endian `f64` blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ActorCritic, NetworkSpec, NnError, TensorKind};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "checkpoint.json";
pub const BLOB_FILE: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    /// Offset into the blob, in values.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub crate_version: String,
    pub architecture: NetworkSpec,
    pub seed: u64,
    pub blob: String,
    pub blob_sha256: String,
    pub tensors: Vec<TensorEntry>,
    /// Free-form context such as the environment configuration.
    #[serde(default)]
    pub metadata: serde_json::Value,
}

/// All tensors in manifest order as little-endian bytes.
pub fn params_to_bytes(net: &ActorCritic) -> Vec<u8> {
    net.tensors()
        .iter()
        .flat_map(|t| t.data.iter().flat_map(|v| v.to_le_bytes()))
        .collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NnError + '_ {
    move |source| NnError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `checkpoint.json` and `params.bin` into `dir`, creating it if needed.
pub fn save_checkpoint(
    net: &ActorCritic,
    seed: u64,
    metadata: serde_json::Value,
    dir: &Path,
) -> Result<CheckpointManifest, NnError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut offset = 0;
    let tensors = net
        .tensors()
        .into_iter()
        .map(|t| {
            let e = TensorEntry {
                name: t.name,
                kind: t.kind,
                shape: t.shape,
                offset,
                len: t.data.len(),
            };
            offset += t.data.len();
            e
        })
        .collect();
    let bytes = params_to_bytes(net);
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        architecture: net.spec().clone(),
        seed,
        blob: BLOB_FILE.to_string(),
        blob_sha256: hex::encode(Sha256::digest(&bytes)),
        tensors,
        metadata,
    };
    let blob_path = dir.join(BLOB_FILE);
    fs::write(&blob_path, &bytes).map_err(io_err(&blob_path))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|source| NnError::Json {
        path: manifest_path.clone(),
        source,
    })?;
    fs::write(&manifest_path, json + "\n").map_err(io_err(&manifest_path))?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(ActorCritic, CheckpointManifest), NnError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|source| NnError::Json {
        path: manifest_path.clone(),
        source,
    })?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported format version {} (expected {CHECKPOINT_VERSION})",
            manifest.format_version
        )));
    }
    let blob_path = dir.join(&manifest.blob);
    let bytes = fs::read(&blob_path).map_err(io_err(&blob_path))?;
    if hex::encode(Sha256::digest(&bytes)) != manifest.blob_sha256 {
        return Err(NnError::Checkpoint(format!(
            "{} does not match its recorded hash",
            blob_path.display()
        )));
    }
    if bytes.len() % 8 != 0 {
        return Err(NnError::Checkpoint(
            "parameter blob length is not a multiple of 8".into(),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();

    let mut net = ActorCritic::zeros(&manifest.architecture)?;
    let slots = net.tensors_mut();
    if slots.len() != manifest.tensors.len() {
        return Err(NnError::Checkpoint(format!(
            "manifest lists {} tensors, architecture has {}",
            manifest.tensors.len(),
            slots.len()
        )));
    }
    for (slot, entry) in slots.into_iter().zip(&manifest.tensors) {
        if slot.name != entry.name || slot.shape != entry.shape || slot.kind != entry.kind {
            return Err(NnError::Checkpoint(format!(
                "tensor `{}` {:?} does not match architecture tensor `{}` {:?}",
                entry.name, entry.shape, slot.name, slot.shape
            )));
        }
        let src = values
            .get(entry.offset..entry.offset + entry.len)
            .ok_or_else(|| NnError::Checkpoint(format!("tensor `{}` runs past the end of the blob", entry.name)))?;
        if src.len() != slot.data.len() {
            return Err(NnError::Checkpoint(format!(
                "tensor `{}` has the wrong length",
                entry.name
            )));
        }
        slot.data.copy_from_slice(src);
    }
    Ok((net, manifest))
}
