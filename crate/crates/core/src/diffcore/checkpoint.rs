//! Single-file checkpoints: one JSON header line holding a tensor manifest
//! and free-form metadata, followed by the little-endian `f64` payload.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Array, ParamStore};

const MAGIC: &str = "hoser-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("not a checkpoint (magic {found:?}, version {version})")]
    Format { found: String, version: u32 },
    #[error("payload has {found} values, manifest expects {expected}")]
    Truncated { expected: usize, found: usize },
    #[error("parameter {0} missing from checkpoint")]
    Missing(String),
    #[error("parameter {name} has shape {found:?} in checkpoint, model expects {expected:?}")]
    Shape { name: String, expected: [usize; 2], found: [usize; 2] },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Offset into the payload, in values (not bytes).
    pub offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    metadata: serde_json::Value,
    tensors: Vec<ManifestEntry>,
}

/// Parameters read back from disk, keyed by name.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub metadata: serde_json::Value,
    pub entries: Vec<(ManifestEntry, Array)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Array> {
        self.entries.iter().find(|(e, _)| e.name == name).map(|(_, a)| a)
    }

    /// Copies every parameter of `store` from this checkpoint.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<(), CheckpointError> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            let a = self.get(&name).ok_or_else(|| CheckpointError::Missing(name.clone()))?;
            let expected = store.get(id).shape();
            if a.shape() != expected {
                return Err(CheckpointError::Shape { name, expected, found: a.shape() });
            }
            *store.get_mut(id) = a.clone();
        }
        Ok(())
    }
}

pub fn write_checkpoint(
    path: &Path,
    store: &ParamStore,
    metadata: serde_json::Value,
) -> Result<(), CheckpointError> {
    let mut offset = 0;
    let tensors = store
        .iter()
        .map(|(_, name, a)| {
            let e = ManifestEntry { name: name.to_string(), shape: a.shape(), offset };
            offset += a.len();
            e
        })
        .collect();
    let header = Header { format: MAGIC.to_string(), version: VERSION, metadata, tensors };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for (_, _, a) in store.iter() {
        for v in a.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: Header = serde_json::from_str(line.trim_end())?;
    if header.format != MAGIC || header.version != VERSION {
        return Err(CheckpointError::Format { found: header.format, version: header.version });
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let expected = header.tensors.iter().map(|e| e.offset + e.shape[0] * e.shape[1]).max().unwrap_or(0);
    if values.len() < expected || bytes.len() % 8 != 0 {
        return Err(CheckpointError::Truncated { expected, found: values.len() });
    }
    let entries = header
        .tensors
        .into_iter()
        .map(|e| {
            let n = e.shape[0] * e.shape[1];
            let a = Array::from_vec(e.shape[0], e.shape[1], values[e.offset..e.offset + n].to_vec());
            (e, a)
        })
        .collect();
    Ok(Checkpoint { metadata: header.metadata, entries })
}
