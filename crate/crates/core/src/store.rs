//! Content-addressed storage of node outputs.
//!
//! Layout:
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/blobs/<hex digest>/<seed>_<batch size>_<batch index>.bin
//! ```
//!
//! A blob is a 16-byte magic (`LFI0` padded with zeros), a shape header
//! (`u32` rank then `rank` × `u64` dims, the first dim being the batch
//! size), the raw little-endian `f64` data, and a trailing SHA-256 of all
//! preceding bytes. Blobs are written to a temporary file and renamed into
//! place before the manifest (itself written via temp-and-rename) lists
//! them, so a crash never leaves the manifest pointing at a missing file.

use crate::executor::{Batch, NodeValues};
use crate::graph::{CompiledGraph, Digest};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::Mutex;
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;
pub const MAGIC: [u8; 16] = *b"LFI0\0\0\0\0\0\0\0\0\0\0\0\0";
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store i/o error at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("store corruption: {0}")]
    Corruption(String),
    #[error("checksum mismatch for {0}")]
    ChecksumMismatch(PathBuf),
    #[error("batch has {got} rows but key says {expected}")]
    BatchSize { expected: u32, got: usize },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StoreKey {
    pub digest: Digest,
    pub root_seed: u64,
    pub batch_size: u32,
    pub batch_index: u64,
}

impl StoreKey {
    fn relative_path(&self) -> PathBuf {
        PathBuf::from("blobs").join(self.digest.to_hex()).join(format!(
            "{}_{}_{}.bin",
            self.root_seed, self.batch_size, self.batch_index
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub digest: String,
    pub root_seed: u64,
    pub batch_size: u32,
    pub batch_index: u64,
    pub path: String,
    pub element_shape: Vec<usize>,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub format_version: u32,
    pub entries: Vec<ManifestEntry>,
}

impl Default for CacheManifest {
    fn default() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            entries: Vec::new(),
        }
    }
}

/// Test hook: make the next `put` stop at a chosen point, as a crash would.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FaultPoint {
    None = 0,
    BeforeBlobRename = 1,
    BeforeManifestRename = 2,
}

pub struct Store {
    dir: PathBuf,
    /// Held for the whole of every write: the single serialized writer.
    index: Mutex<BTreeMap<StoreKey, ManifestEntry>>,
    fault: AtomicU8,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("dir", &self.dir).finish_non_exhaustive()
    }
}

/// Serializes one node's batch output in the blob format.
pub fn encode_blob(values: &NodeValues) -> Vec<u8> {
    let mut shape = vec![values.batch_size()];
    shape.extend_from_slice(values.element_shape());
    let mut out = Vec::with_capacity(16 + 4 + 8 * shape.len() + 8 * values.as_slice().len() + 32);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for d in &shape {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for x in values.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    let sum: [u8; 32] = Sha256::digest(&out).into();
    out.extend_from_slice(&sum);
    out
}

/// Parses a blob, verifying magic, layout and checksum.
pub fn decode_blob(bytes: &[u8], path: &Path) -> Result<NodeValues, StoreError> {
    let corrupt = |m: &str| StoreError::Corruption(format!("{}: {m}", path.display()));
    if bytes.len() < 16 + 4 + 32 || bytes[..16] != MAGIC {
        return Err(corrupt("bad magic or truncated"));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if <[u8; 32]>::from(Sha256::digest(body)) != sum {
        return Err(StoreError::ChecksumMismatch(path.to_path_buf()));
    }
    let rank = u32::from_le_bytes(body[16..20].try_into().expect("4 bytes")) as usize;
    let header_end = 20 + 8 * rank;
    if rank == 0 || body.len() < header_end {
        return Err(corrupt("bad shape header"));
    }
    let dims: Vec<usize> = body[20..header_end]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
        .collect();
    let payload = &body[header_end..];
    let count: usize = dims.iter().product();
    if payload.len() != 8 * count {
        return Err(corrupt("payload length does not match shape"));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    NodeValues::new(dims[1..].to_vec(), dims[0], data).ok_or_else(|| corrupt("shape mismatch"))
}

fn write_synced(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))?;
    f.sync_all().map_err(io_err(path))
}

impl Store {
    /// Opens (creating if needed) a store directory. Every manifest entry
    /// must point at an existing blob whose checksum matches.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        let blobs = dir.join("blobs");
        fs::create_dir_all(&blobs).map_err(io_err(&blobs))?;
        let manifest_path = dir.join(MANIFEST);
        let manifest = match fs::read(&manifest_path) {
            Ok(bytes) => serde_json::from_slice::<CacheManifest>(&bytes)
                .map_err(|e| StoreError::Corruption(format!("manifest: {e}")))?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => CacheManifest::default(),
            Err(e) => return Err(io_err(&manifest_path)(e)),
        };
        if manifest.format_version != FORMAT_VERSION {
            return Err(StoreError::Corruption(format!(
                "unsupported manifest version {}",
                manifest.format_version
            )));
        }
        let mut index = BTreeMap::new();
        for entry in manifest.entries {
            let digest = Digest::from_hex(&entry.digest)
                .ok_or_else(|| StoreError::Corruption(format!("bad digest '{}'", entry.digest)))?;
            let path = dir.join(&entry.path);
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            if hex::encode(&bytes[bytes.len().saturating_sub(32)..]) != entry.checksum {
                return Err(StoreError::ChecksumMismatch(path));
            }
            decode_blob(&bytes, &path)?;
            let key = StoreKey {
                digest,
                root_seed: entry.root_seed,
                batch_size: entry.batch_size,
                batch_index: entry.batch_index,
            };
            index.insert(key, entry);
        }
        Ok(Self {
            dir,
            index: Mutex::new(index),
            fault: AtomicU8::new(FaultPoint::None as u8),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.index.lock().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn manifest(&self) -> CacheManifest {
        CacheManifest {
            format_version: FORMAT_VERSION,
            entries: self.index.lock().expect("store lock").values().cloned().collect(),
        }
    }

    #[doc(hidden)]
    pub fn inject_fault(&self, point: FaultPoint) {
        self.fault.store(point as u8, Ordering::SeqCst);
    }

    fn take_fault(&self, point: FaultPoint) -> Result<(), StoreError> {
        if self
            .fault
            .compare_exchange(point as u8, FaultPoint::None as u8, Ordering::SeqCst, Ordering::SeqCst)
            .is_ok()
        {
            return Err(StoreError::Io {
                path: self.dir.clone(),
                source: io::Error::other(format!("injected fault {point:?}")),
            });
        }
        Ok(())
    }

    /// Stores a batch of node outputs. Re-putting equal data is a no-op;
    /// different data under an existing key is corruption.
    pub fn put(&self, key: &StoreKey, values: &NodeValues) -> Result<(), StoreError> {
        if values.batch_size() != key.batch_size as usize {
            return Err(StoreError::BatchSize {
                expected: key.batch_size,
                got: values.batch_size(),
            });
        }
        let bytes = encode_blob(values);
        let mut index = self.index.lock().expect("store lock");
        if let Some(entry) = index.get(key) {
            let path = self.dir.join(&entry.path);
            let existing = fs::read(&path).map_err(io_err(&path))?;
            if existing == bytes {
                return Ok(());
            }
            return Err(StoreError::Corruption(format!(
                "different data already stored under {}",
                path.display()
            )));
        }
        let rel = key.relative_path();
        let path = self.dir.join(&rel);
        let parent = path.parent().expect("blob path has a parent");
        fs::create_dir_all(parent).map_err(io_err(parent))?;
        let tmp = path.with_extension("bin.tmp");
        write_synced(&tmp, &bytes)?;
        self.take_fault(FaultPoint::BeforeBlobRename)?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;

        let entry = ManifestEntry {
            digest: key.digest.to_hex(),
            root_seed: key.root_seed,
            batch_size: key.batch_size,
            batch_index: key.batch_index,
            path: rel.to_string_lossy().replace('\\', "/"),
            element_shape: values.element_shape().to_vec(),
            checksum: hex::encode(&bytes[bytes.len() - 32..]),
        };
        let mut next = index.clone();
        next.insert(*key, entry);
        let manifest = CacheManifest {
            format_version: FORMAT_VERSION,
            entries: next.values().cloned().collect(),
        };
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        let manifest_path = self.dir.join(MANIFEST);
        let manifest_tmp = self.dir.join("manifest.json.tmp");
        write_synced(&manifest_tmp, &json)?;
        self.take_fault(FaultPoint::BeforeManifestRename)?;
        fs::rename(&manifest_tmp, &manifest_path).map_err(io_err(&manifest_path))?;
        *index = next;
        Ok(())
    }

    pub fn get(&self, key: &StoreKey) -> Result<Option<NodeValues>, StoreError> {
        let entry = match self.index.lock().expect("store lock").get(key) {
            Some(e) => e.clone(),
            None => return Ok(None),
        };
        let path = self.dir.join(&entry.path);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if hex::encode(&bytes[bytes.len().saturating_sub(32)..]) != entry.checksum {
            return Err(StoreError::ChecksumMismatch(path));
        }
        decode_blob(&bytes, &path).map(Some)
    }

    /// Loads every stored node output for this batch, ready to pass to the
    /// executor as precomputed values.
    pub fn plan_reuse(
        &self,
        cg: &CompiledGraph,
        root_seed: u64,
        batch_size: usize,
        batch_index: u64,
    ) -> Result<Batch, StoreError> {
        let mut batch = Batch::empty(batch_index, batch_size);
        for (name, digest) in cg.digests() {
            let key = StoreKey {
                digest: *digest,
                root_seed,
                batch_size: batch_size as u32,
                batch_index,
            };
            if let Some(values) = self.get(&key)? {
                batch.insert(name.clone(), values);
            }
        }
        Ok(batch)
    }
}
