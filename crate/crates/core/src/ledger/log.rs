//! Append-only vertex log.
//!
//! Each record is `u64 LE length` followed by the canonical vertex encoding.
//! Replaying the records in order through `insert_vertex` and `try_commit`
//! rebuilds the state that wrote them.

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::codec::DecodeError;

use super::{Keyring, LedgerConfig, LedgerState, Rejection, Vertex};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log i/o: {0}")]
    Io(#[from] io::Error),
    #[error("log record {index} at byte {offset}: {source}")]
    Decode { index: usize, offset: u64, source: DecodeError },
    #[error("log record {index} truncated at byte {offset}")]
    Truncated { index: usize, offset: u64 },
    #[error("log record {index} rejected on replay: {source}")]
    Rejected { index: usize, source: Rejection },
}

pub struct LedgerLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl LedgerLog {
    /// Opens `path` for appending, creating it if needed.
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(LedgerLog { path, out: BufWriter::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, v: &Vertex) -> io::Result<()> {
        let enc = v.encode();
        self.out.write_all(&(enc.len() as u64).to_le_bytes())?;
        self.out.write_all(&enc)?;
        Ok(())
    }

    pub fn sync(&mut self) -> io::Result<()> {
        self.out.flush()?;
        self.out.get_ref().sync_data()
    }

    /// Reads every record of the log at `path`. A missing file is an empty log.
    pub fn read_all(path: impl AsRef<Path>) -> Result<Vec<Vertex>, LogError> {
        let mut bytes = Vec::new();
        match File::open(path) {
            Ok(mut f) => {
                f.read_to_end(&mut bytes)?;
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(vec![]),
            Err(e) => return Err(e.into()),
        }
        let mut out = Vec::new();
        let mut pos = 0usize;
        while pos < bytes.len() {
            let index = out.len();
            let truncated = LogError::Truncated { index, offset: pos as u64 };
            let Some(head) = bytes.get(pos..pos + 8) else { return Err(truncated) };
            let len = u64::from_le_bytes(head.try_into().unwrap());
            let start = pos + 8;
            let end = match usize::try_from(len).ok().and_then(|l| start.checked_add(l)) {
                Some(e) if e <= bytes.len() => e,
                _ => return Err(truncated),
            };
            let v = Vertex::decode(&bytes[start..end]).map_err(|source| LogError::Decode { index, offset: pos as u64, source })?;
            out.push(v);
            pos = end;
        }
        Ok(out)
    }
}

impl Drop for LedgerLog {
    fn drop(&mut self) {
        let _ = self.out.flush();
    }
}

/// Rebuilds a ledger from the log at `path`.
pub fn replay_log(path: impl AsRef<Path>, config: LedgerConfig, keys: Keyring) -> Result<LedgerState, LogError> {
    let mut state = LedgerState::new(config, keys);
    for (index, v) in LedgerLog::read_all(path)?.into_iter().enumerate() {
        state.insert_vertex(v).map_err(|source| LogError::Rejected { index, source })?;
        state.try_commit();
    }
    Ok(state)
}
