//! Ledger transactions and the version identifiers they define.
//!
//! Canonical encoding (little-endian):
//!
//! ```text
//! kind   u8   1 CREATE | 2 UPDATE | 3 MERGE | 4 FORK
//! author u32
//! body   CREATE: cid_v0
//!        UPDATE: base_version, cid_delta, full_file u8
//!        MERGE:  left, right
//!        FORK:   base_version, u64 count, count x child
//! sig    64 bytes, ed25519 over everything above
//! ```

use ed25519_dalek::SigningKey;

use crate::cid::{Cid, CodecTag};
use crate::codec::{DecodeError, Reader, Writer};

use super::keys::{self, Keyring};
use super::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum TxKind {
    Create = 1,
    Update = 2,
    Merge = 3,
    Fork = 4,
}

impl TxKind {
    pub fn name(self) -> &'static str {
        match self {
            TxKind::Create => "CREATE",
            TxKind::Update => "UPDATE",
            TxKind::Merge => "MERGE",
            TxKind::Fork => "FORK",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TxBody {
    Create {
        cid_v0: Cid,
    },
    /// `full_file` records whether the increment is a complete file, so that
    /// every replica can apply the retrieval stop rule without the blob.
    Update {
        base_version: Cid,
        cid_delta: Cid,
        full_file: bool,
    },
    Merge {
        left: Cid,
        right: Cid,
    },
    Fork {
        base_version: Cid,
        children: Vec<Cid>,
    },
}

impl TxBody {
    pub fn kind(&self) -> TxKind {
        match self {
            TxBody::Create { .. } => TxKind::Create,
            TxBody::Update { .. } => TxKind::Update,
            TxBody::Merge { .. } => TxKind::Merge,
            TxBody::Fork { .. } => TxKind::Fork,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Transaction {
    author: NodeId,
    body: TxBody,
    signature: [u8; 64],
}

/// Identifier of the `index`-th child of a fork. Fork children carry an empty
/// increment, so they are named from their lineage instead of their content.
pub fn fork_child_cid(parent: &Cid, index: u32, author: NodeId) -> Cid {
    Cid::of_parts(&[b"fork", &parent.to_bytes(), &index.to_le_bytes(), &author.to_le_bytes()], CodecTag::Transaction)
}

pub fn fork_children(parent: &Cid, count: u32, author: NodeId) -> Vec<Cid> {
    (0..count).map(|i| fork_child_cid(parent, i, author)).collect()
}

/// Identifier of the version produced by merging `left` and `right`.
pub fn merge_version_cid(left: &Cid, right: &Cid, author: NodeId) -> Cid {
    Cid::of_parts(&[b"merge", &left.to_bytes(), &right.to_bytes(), &author.to_le_bytes()], CodecTag::Transaction)
}

impl Transaction {
    pub fn sign(author: NodeId, body: TxBody, key: &SigningKey) -> Self {
        let mut tx = Transaction { author, body, signature: [0; 64] };
        tx.signature = keys::sign(key, &tx.signing_bytes());
        tx
    }

    /// Builds a transaction with an explicit signature, e.g. a forged one.
    pub fn with_signature(author: NodeId, body: TxBody, signature: [u8; 64]) -> Self {
        Transaction { author, body, signature }
    }

    pub fn author(&self) -> NodeId {
        self.author
    }

    pub fn body(&self) -> &TxBody {
        &self.body
    }

    pub fn kind(&self) -> TxKind {
        self.body.kind()
    }

    pub fn signature(&self) -> &[u8; 64] {
        &self.signature
    }

    pub fn verify(&self, keys: &Keyring) -> bool {
        keys.verify(self.author, &self.signing_bytes(), &self.signature)
    }

    /// Versions this transaction derives from, in declared order.
    pub fn referenced_versions(&self) -> Vec<Cid> {
        match &self.body {
            TxBody::Create { .. } => vec![],
            TxBody::Update { base_version, .. } => vec![*base_version],
            TxBody::Merge { left, right } => vec![*left, *right],
            TxBody::Fork { base_version, .. } => vec![*base_version],
        }
    }

    /// Versions this transaction brings into existence.
    pub fn defined_versions(&self) -> Vec<Cid> {
        match &self.body {
            TxBody::Create { cid_v0 } => vec![*cid_v0],
            TxBody::Update { cid_delta, .. } => vec![*cid_delta],
            TxBody::Merge { left, right } => vec![merge_version_cid(left, right, self.author)],
            TxBody::Fork { children, .. } => children.clone(),
        }
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write_unsigned(&mut w);
        w.finish()
    }

    fn write_unsigned(&self, w: &mut Writer) {
        w.u8(self.kind() as u8).u32(self.author);
        match &self.body {
            TxBody::Create { cid_v0 } => {
                w.cid(cid_v0);
            }
            TxBody::Update { base_version, cid_delta, full_file } => {
                w.cid(base_version).cid(cid_delta).u8(*full_file as u8);
            }
            TxBody::Merge { left, right } => {
                w.cid(left).cid(right);
            }
            TxBody::Fork { base_version, children } => {
                w.cid(base_version).cids(children);
            }
        }
    }

    pub fn write(&self, w: &mut Writer) {
        self.write_unsigned(w);
        w.raw(&self.signature);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(&mut w);
        w.finish()
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let kind = r.u8()?;
        let author = r.u32()?;
        let body = match kind {
            1 => TxBody::Create { cid_v0: r.cid()? },
            2 => {
                let base_version = r.cid()?;
                let cid_delta = r.cid()?;
                let full_file = match r.u8()? {
                    0 => false,
                    1 => true,
                    v => return Err(DecodeError::Invalid { what: "full_file flag", value: v as u64 }),
                };
                TxBody::Update { base_version, cid_delta, full_file }
            }
            3 => TxBody::Merge { left: r.cid()?, right: r.cid()? },
            4 => TxBody::Fork { base_version: r.cid()?, children: r.cids()? },
            k => return Err(DecodeError::Invalid { what: "transaction kind", value: k as u64 }),
        };
        let signature: [u8; 64] = r.take(64)?.try_into().unwrap();
        Ok(Transaction { author, body, signature })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let tx = Self::read(&mut r)?;
        r.finish()?;
        Ok(tx)
    }

    pub fn id(&self) -> Cid {
        Cid::of(&self.encode(), CodecTag::Transaction)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::keys::derive_signing_key;

    fn cid(s: &str, t: CodecTag) -> Cid {
        Cid::of(s.as_bytes(), t)
    }

    fn all_kinds() -> Vec<TxBody> {
        let v0 = cid("v0", CodecTag::Original);
        let d = cid("d", CodecTag::Increment);
        vec![
            TxBody::Create { cid_v0: v0 },
            TxBody::Update { base_version: v0, cid_delta: d, full_file: true },
            TxBody::Merge { left: v0, right: d },
            TxBody::Fork { base_version: v0, children: fork_children(&v0, 3, 2) },
        ]
    }

    #[test]
    fn encoding_round_trips_and_verifies() {
        let key = derive_signing_key(5, 2);
        let ring = Keyring::derive(5, 4);
        for body in all_kinds() {
            let tx = Transaction::sign(2, body, &key);
            assert!(tx.verify(&ring));
            let back = Transaction::decode(&tx.encode()).unwrap();
            assert_eq!(back, tx);
            assert_eq!(back.id(), tx.id());
        }
    }

    #[test]
    fn tampering_breaks_signature() {
        let key = derive_signing_key(5, 2);
        let ring = Keyring::derive(5, 4);
        let tx = Transaction::sign(2, TxBody::Create { cid_v0: cid("a", CodecTag::Original) }, &key);
        let forged = Transaction::with_signature(2, TxBody::Create { cid_v0: cid("b", CodecTag::Original) }, *tx.signature());
        assert!(!forged.verify(&ring));
        // Claiming another author fails too.
        let stolen = Transaction::with_signature(1, tx.body().clone(), *tx.signature());
        assert!(!stolen.verify(&ring));
    }

    #[test]
    fn fork_children_are_distinct_and_stable() {
        let p = cid("p", CodecTag::Original);
        let kids = fork_children(&p, 3, 0);
        assert_eq!(kids.len(), 3);
        assert_ne!(kids[0], kids[1]);
        assert_eq!(kids, fork_children(&p, 3, 0));
        assert_ne!(kids[0], fork_child_cid(&p, 0, 1));
        assert!(kids.iter().all(|k| k.tag() == CodecTag::Transaction));
    }

    #[test]
    fn referenced_and_defined_versions() {
        let key = derive_signing_key(0, 1);
        let bodies = all_kinds();
        let counts: Vec<(usize, usize)> = bodies
            .into_iter()
            .map(|b| {
                let tx = Transaction::sign(1, b, &key);
                (tx.referenced_versions().len(), tx.defined_versions().len())
            })
            .collect();
        assert_eq!(counts, vec![(0, 1), (1, 1), (2, 1), (1, 3)]);
    }

    #[test]
    fn bad_kind_and_flag_rejected() {
        let key = derive_signing_key(0, 1);
        let tx = Transaction::sign(
            1,
            TxBody::Update { base_version: cid("a", CodecTag::Original), cid_delta: cid("b", CodecTag::Increment), full_file: false },
            &key,
        );
        let mut enc = tx.encode();
        enc[0] = 9;
        assert!(Transaction::decode(&enc).is_err());
        let mut enc = tx.encode();
        enc[5 + 66] = 2;
        assert!(Transaction::decode(&enc).is_err());
    }
}
