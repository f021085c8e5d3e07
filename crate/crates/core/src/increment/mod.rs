//! Increments: edit scripts between file versions.
//!
//! [`generate_increment`] picks the line-based text engine when both versions
//! look like text, the binary engine otherwise, and falls back to storing the
//! new version whole when the encoded delta would be larger than it.
//!
//! Container format (`FDI1`):
//!
//! ```text
//! magic       "FDI1"                 4 bytes
//! algo        0x01 text | 0x02 binary | 0x03 full file
//! base        cid (33 bytes)         present iff algo != 0x03
//! payload_len u64 little-endian
//! payload
//! ```

pub mod binary;
pub mod text;

use crate::cid::{Cid, CodecTag, CID_LEN};
use crate::codec::{DecodeError, Reader, Writer};

pub const MAGIC: &[u8; 4] = b"FDI1";

/// Container overhead of a full-file increment: magic, algo byte, length.
pub const FULL_FILE_OVERHEAD: usize = 4 + 1 + 8;

/// Container overhead of a delta increment (adds the base cid).
pub const DELTA_OVERHEAD: usize = FULL_FILE_OVERHEAD + CID_LEN;

/// Only this many leading bytes are inspected by [`classify`].
pub const CLASSIFY_WINDOW: usize = 8192;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PatchError {
    #[error("malformed increment: {0}")]
    Decode(String),
    #[error("increment does not fit base: {0}")]
    Mismatch(String),
}

impl From<DecodeError> for PatchError {
    fn from(e: DecodeError) -> Self {
        PatchError::Decode(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Text,
    Binary,
}

/// Text iff the leading window has no NUL byte and is valid UTF-8. A code point
/// cut by the window boundary is tolerated.
pub fn classify(bytes: &[u8]) -> Class {
    let window = &bytes[..bytes.len().min(CLASSIFY_WINDOW)];
    if window.contains(&0) {
        return Class::Binary;
    }
    match std::str::from_utf8(window) {
        Ok(_) => Class::Text,
        Err(e) if e.error_len().is_none() && window.len() < bytes.len() => Class::Text,
        Err(_) => Class::Binary,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum Algo {
    TextEditScript = 0x01,
    BinaryDelta = 0x02,
    FullFile = 0x03,
}

impl Algo {
    pub fn from_u8(b: u8) -> Option<Self> {
        match b {
            0x01 => Some(Algo::TextEditScript),
            0x02 => Some(Algo::BinaryDelta),
            0x03 => Some(Algo::FullFile),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Increment {
    algo: Algo,
    base_hint: Option<Cid>,
    payload: Vec<u8>,
}

impl Increment {
    pub fn full_file(content: Vec<u8>) -> Self {
        Increment { algo: Algo::FullFile, base_hint: None, payload: content }
    }

    /// A delta increment. `algo` must not be [`Algo::FullFile`].
    pub fn delta(algo: Algo, base_hint: Cid, payload: Vec<u8>) -> Self {
        assert_ne!(algo, Algo::FullFile, "full-file increments carry no base");
        Increment { algo, base_hint: Some(base_hint), payload }
    }

    pub fn algo(&self) -> Algo {
        self.algo
    }

    pub fn base_hint(&self) -> Option<&Cid> {
        self.base_hint.as_ref()
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn delta_size(&self) -> usize {
        self.payload.len()
    }

    pub fn is_full_file(&self) -> bool {
        self.algo == Algo::FullFile
    }

    /// Replaces the base hint, e.g. with the ledger version the delta was
    /// computed against. No effect on full-file increments.
    pub fn with_base_hint(mut self, base: Cid) -> Self {
        if self.base_hint.is_some() {
            self.base_hint = Some(base);
        }
        self
    }

    pub fn encoded_len(&self) -> usize {
        FULL_FILE_OVERHEAD + self.base_hint.map_or(0, |_| CID_LEN) + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(self.encoded_len());
        w.raw(MAGIC).u8(self.algo as u8);
        if let Some(b) = &self.base_hint {
            w.cid(b);
        }
        w.bytes(&self.payload);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PatchError> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(PatchError::Decode("bad magic".into()));
        }
        let algo_byte = r.u8()?;
        let algo = Algo::from_u8(algo_byte).ok_or_else(|| PatchError::Decode(format!("unknown algo 0x{algo_byte:02x}")))?;
        let base_hint = match algo {
            Algo::FullFile => None,
            _ => Some(r.cid()?),
        };
        let payload = r.bytes()?.to_vec();
        r.finish()?;
        Ok(Increment { algo, base_hint, payload })
    }

    /// Cid of the encoded container.
    pub fn cid(&self) -> Cid {
        Cid::of(&self.encode(), CodecTag::Increment)
    }
}

/// `true` iff `bytes` begins with the container magic.
pub fn has_magic(bytes: &[u8]) -> bool {
    bytes.starts_with(MAGIC)
}

/// Builds the increment that turns `old` into `new`.
///
/// The base hint defaults to the original-file cid of `old`. Callers that
/// track ledger versions replace it with [`Increment::with_base_hint`].
pub fn generate_increment(old: &[u8], new: &[u8]) -> Increment {
    let base = Cid::of(old, CodecTag::Original);
    let inc = if classify(old) == Class::Text && classify(new) == Class::Text {
        Increment::delta(Algo::TextEditScript, base, text::diff(old, new).encode())
    } else {
        Increment::delta(Algo::BinaryDelta, base, binary::diff(old, new).encode())
    };
    if inc.encoded_len() > new.len() {
        Increment::full_file(new.to_vec())
    } else {
        inc
    }
}

pub fn apply_patch(base: &[u8], inc: &Increment) -> Result<Vec<u8>, PatchError> {
    match inc.algo {
        Algo::FullFile => Ok(inc.payload.clone()),
        Algo::TextEditScript => text::TextScript::decode(&inc.payload)?.apply(base),
        Algo::BinaryDelta => binary::BinaryDelta::decode(&inc.payload)?.apply(base),
    }
}

/// Decodes a container and applies it.
pub fn apply_encoded(base: &[u8], container: &[u8]) -> Result<Vec<u8>, PatchError> {
    apply_patch(base, &Increment::decode(container)?)
}
