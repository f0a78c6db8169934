//! Named-array checkpoint files.
//!
//! Layout: an 8-byte header (`ECKP` magic + little-endian u32 version),
//! a little-endian u64 manifest length, a JSON manifest, then the raw
//! little-endian float32 payload. The manifest maps parameter-path strings
//! to shapes and payload offsets, and carries the architecture tag, the
//! configuration document, and a SHA-256 hash of that document.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const MAGIC: &[u8; 4] = b"ECKP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// element offset into the f32 payload
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub arch: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub tensors: Vec<TensorEntry>,
}

/// A checkpoint in memory: manifest plus named float32 arrays.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub arch: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

/// Canonical hash of a configuration document.
pub fn config_hash(config: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("corrupt manifest: {0}")]
    BadManifest(#[from] serde_json::Error),
    #[error("payload truncated: entry {name} wants {want} elements at {offset}")]
    Truncated { name: String, want: u64, offset: u64 },
}

impl Checkpoint {
    pub fn new(
        arch: impl Into<String>,
        config: serde_json::Value,
        tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
    ) -> Self {
        let hash = config_hash(&config);
        Checkpoint { arch: arch.into(), config, config_hash: hash, tensors }
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| (s.as_slice(), d.as_slice()))
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for (name, shape, data) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset,
                len: data.len() as u64,
            });
            offset += data.len() as u64;
        }
        let manifest = Manifest {
            arch: self.arch.clone(),
            config: self.config.clone(),
            config_hash: self.config_hash.clone(),
            tensors: entries,
        };
        let manifest_bytes = serde_json::to_vec(&manifest)?;

        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
        w.write_all(&manifest_bytes)?;
        for (_, _, data) in &self.tensors {
            for v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4)?;
        let version = u32::from_le_bytes(buf4);
        if version != VERSION {
            return Err(CheckpointError::BadVersion(version));
        }
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8)?;
        let manifest_len = u64::from_le_bytes(buf8) as usize;
        let mut manifest_bytes = vec![0u8; manifest_len];
        r.read_exact(&mut manifest_bytes)?;
        let manifest: Manifest = serde_json::from_slice(&manifest_bytes)?;

        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        let floats: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();

        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in &manifest.tensors {
            let start = e.offset as usize;
            let end = start + e.len as usize;
            if end > floats.len() {
                return Err(CheckpointError::Truncated {
                    name: e.name.clone(),
                    want: e.len,
                    offset: e.offset,
                });
            }
            tensors.push((e.name.clone(), e.shape.clone(), floats[start..end].to_vec()));
        }
        Ok(Checkpoint {
            arch: manifest.arch,
            config: manifest.config,
            config_hash: manifest.config_hash,
            tensors,
        })
    }
}
