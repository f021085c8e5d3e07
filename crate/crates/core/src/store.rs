//! Content-addressed blob storage.
//!
//! Two backends share one interface: an in-memory map used by simulated
//! nodes, and a directory layout used by the CLI workspace:
//!
//! ```text
//! <root>/<hex[0..2]>/<hex[2..4]>/<66-hex-cid>.<orig|inc|tx>
//! ```
//!
//! Every read re-hashes the payload and reports [`StoreError::Corrupt`] on a
//! mismatch.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use crate::cid::{Cid, CodecTag};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("blob {0} not found")]
    NotFound(Cid),
    #[error("blob {cid} is corrupt: content hashes to {actual}")]
    Corrupt { cid: Cid, actual: Cid },
    #[error("blob store i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug)]
enum Backend {
    Memory(RwLock<HashMap<Cid, Vec<u8>>>),
    Dir(PathBuf),
}

#[derive(Debug)]
pub struct BlobStore {
    backend: Backend,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl BlobStore {
    pub fn in_memory() -> Self {
        BlobStore { backend: Backend::Memory(RwLock::new(HashMap::new())) }
    }

    /// Opens (creating if needed) a directory-backed store.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(BlobStore { backend: Backend::Dir(root) })
    }

    pub fn put_blob(&self, bytes: &[u8], kind: CodecTag) -> Result<Cid, StoreError> {
        let cid = Cid::of(bytes, kind);
        match &self.backend {
            Backend::Memory(map) => {
                map.write().unwrap().entry(cid).or_insert_with(|| bytes.to_vec());
            }
            Backend::Dir(root) => {
                let path = blob_path(root, &cid);
                if path.exists() {
                    return Ok(cid);
                }
                let dir = path.parent().expect("blob path has a parent");
                fs::create_dir_all(dir)?;
                // Write to a unique temp name and rename, so concurrent writers of
                // the same cid never observe a partial file.
                let tmp = dir.join(format!(".tmp-{}-{}", std::process::id(), TMP_COUNTER.fetch_add(1, Ordering::Relaxed)));
                let mut f = fs::File::create(&tmp)?;
                f.write_all(bytes)?;
                f.sync_all()?;
                drop(f);
                fs::rename(&tmp, &path)?;
            }
        }
        Ok(cid)
    }

    pub fn get_blob(&self, cid: &Cid) -> Result<Vec<u8>, StoreError> {
        let bytes = match &self.backend {
            Backend::Memory(map) => map.read().unwrap().get(cid).cloned().ok_or(StoreError::NotFound(*cid))?,
            Backend::Dir(root) => match fs::read(blob_path(root, cid)) {
                Ok(b) => b,
                Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NotFound(*cid)),
                Err(e) => return Err(e.into()),
            },
        };
        let actual = Cid::of(&bytes, cid.tag());
        if actual != *cid {
            return Err(StoreError::Corrupt { cid: *cid, actual });
        }
        Ok(bytes)
    }

    pub fn contains(&self, cid: &Cid) -> bool {
        match &self.backend {
            Backend::Memory(map) => map.read().unwrap().contains_key(cid),
            Backend::Dir(root) => blob_path(root, cid).exists(),
        }
    }

    /// Removes a blob. Returns whether it was present.
    pub fn delete(&self, cid: &Cid) -> Result<bool, StoreError> {
        match &self.backend {
            Backend::Memory(map) => Ok(map.write().unwrap().remove(cid).is_some()),
            Backend::Dir(root) => match fs::remove_file(blob_path(root, cid)) {
                Ok(()) => Ok(true),
                Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(false),
                Err(e) => Err(e.into()),
            },
        }
    }

    /// Number of stored blobs.
    pub fn len(&self) -> Result<usize, StoreError> {
        Ok(self.list()?.len())
    }

    pub fn is_empty(&self) -> Result<bool, StoreError> {
        Ok(self.len()? == 0)
    }

    /// Sum of payload sizes over distinct stored blobs.
    pub fn total_bytes(&self) -> Result<u64, StoreError> {
        match &self.backend {
            Backend::Memory(map) => Ok(map.read().unwrap().values().map(|v| v.len() as u64).sum()),
            Backend::Dir(root) => {
                let mut total = 0;
                for cid in self.list()? {
                    total += fs::metadata(blob_path(root, &cid))?.len();
                }
                Ok(total)
            }
        }
    }

    /// All stored cids, sorted.
    pub fn list(&self) -> Result<Vec<Cid>, StoreError> {
        let mut out = match &self.backend {
            Backend::Memory(map) => map.read().unwrap().keys().copied().collect(),
            Backend::Dir(root) => list_dir(root)?,
        };
        out.sort();
        Ok(out)
    }

    /// On-disk path of a blob, for directory-backed stores.
    pub fn path_of(&self, cid: &Cid) -> Option<PathBuf> {
        match &self.backend {
            Backend::Dir(root) => Some(blob_path(root, cid)),
            Backend::Memory(_) => None,
        }
    }

    /// Overwrites stored bytes without re-hashing. Fault injection only.
    pub fn overwrite_unchecked(&self, cid: &Cid, bytes: Vec<u8>) -> Result<(), StoreError> {
        match &self.backend {
            Backend::Memory(map) => {
                map.write().unwrap().insert(*cid, bytes);
            }
            Backend::Dir(root) => fs::write(blob_path(root, cid), bytes)?,
        }
        Ok(())
    }
}

fn blob_path(root: &Path, cid: &Cid) -> PathBuf {
    let h = cid.to_hex();
    root.join(&h[0..2]).join(&h[2..4]).join(format!("{h}.{}", cid.tag().name()))
}

fn list_dir(root: &Path) -> Result<Vec<Cid>, StoreError> {
    let mut out = Vec::new();
    for a in fs::read_dir(root)? {
        let a = a?;
        if !a.file_type()?.is_dir() {
            continue;
        }
        for b in fs::read_dir(a.path())? {
            let b = b?;
            if !b.file_type()?.is_dir() {
                continue;
            }
            for f in fs::read_dir(b.path())? {
                let name = f?.file_name();
                let name = name.to_string_lossy();
                if let Some((hex, _kind)) = name.split_once('.') {
                    if let Ok(cid) = hex.parse::<Cid>() {
                        out.push(cid);
                    }
                }
            }
        }
    }
    Ok(out)
}
