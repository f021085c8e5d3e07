//! Content identifiers.
//!
//! A [`Cid`] is the SHA-256 digest of `codec_tag || payload`, together with the
//! tag itself. The tag participates in the preimage, so an original file and
//! an increment with identical bytes get different identifiers.
//!
//! The rendered form is 66 lowercase hex characters: two for the tag byte,
//! then 64 for the digest.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

/// Encoded size of a [`Cid`]: one tag byte plus a 32-byte digest.
pub const CID_LEN: usize = 33;

/// Length of the rendered hex form.
pub const CID_HEX_LEN: usize = 2 * CID_LEN;

/// Payload kind of a content-addressed blob.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum CodecTag {
    /// A complete original file.
    Original = 0x01,
    /// An increment container.
    Increment = 0x02,
    /// A transaction, vertex, or an identifier derived from one.
    Transaction = 0x03,
}

impl CodecTag {
    pub fn from_u8(b: u8) -> Option<Self> {
        match b {
            0x01 => Some(CodecTag::Original),
            0x02 => Some(CodecTag::Increment),
            0x03 => Some(CodecTag::Transaction),
            _ => None,
        }
    }

    /// Short name used in on-disk file names.
    pub fn name(self) -> &'static str {
        match self {
            CodecTag::Original => "orig",
            CodecTag::Increment => "inc",
            CodecTag::Transaction => "tx",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cid {
    tag: CodecTag,
    digest: [u8; 32],
}

impl Cid {
    /// Hashes `bytes` under `tag`.
    pub fn of(bytes: &[u8], tag: CodecTag) -> Self {
        Self::of_parts(&[bytes], tag)
    }

    /// Hashes the concatenation of `parts` under `tag`.
    pub fn of_parts(parts: &[&[u8]], tag: CodecTag) -> Self {
        let mut h = Sha256::new();
        h.update([tag as u8]);
        for p in parts {
            h.update(p);
        }
        Cid { tag, digest: h.finalize().into() }
    }

    pub fn from_raw(tag: CodecTag, digest: [u8; 32]) -> Self {
        Cid { tag, digest }
    }

    pub fn tag(&self) -> CodecTag {
        self.tag
    }

    pub fn digest(&self) -> &[u8; 32] {
        &self.digest
    }

    /// `true` iff `bytes` hash to this identifier under its own tag.
    pub fn verifies(&self, bytes: &[u8]) -> bool {
        Cid::of(bytes, self.tag) == *self
    }

    pub fn to_bytes(&self) -> [u8; CID_LEN] {
        let mut out = [0u8; CID_LEN];
        out[0] = self.tag as u8;
        out[1..].copy_from_slice(&self.digest);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        if b.len() != CID_LEN {
            return None;
        }
        let tag = CodecTag::from_u8(b[0])?;
        Some(Cid { tag, digest: b[1..].try_into().ok()? })
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    /// First 12 hex chars of the digest, for logs.
    pub fn short(&self) -> String {
        hex::encode(&self.digest[..6])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseCidError {
    #[error("cid must be {CID_HEX_LEN} hex characters, got {0}")]
    Length(usize),
    #[error("cid must be lowercase hex")]
    NotHex,
    #[error("unknown codec tag 0x{0:02x}")]
    Tag(u8),
}

impl FromStr for Cid {
    type Err = ParseCidError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != CID_HEX_LEN {
            return Err(ParseCidError::Length(s.len()));
        }
        if !s.bytes().all(|c| c.is_ascii_digit() || (b'a'..=b'f').contains(&c)) {
            return Err(ParseCidError::NotHex);
        }
        let raw = hex::decode(s).map_err(|_| ParseCidError::NotHex)?;
        Cid::from_bytes(&raw).ok_or(ParseCidError::Tag(raw[0]))
    }
}

impl fmt::Display for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Cid({:02x}:{})", self.tag as u8, self.short())
    }
}
