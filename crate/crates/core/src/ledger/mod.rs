//! Two-layer DAG ledger.
//!
//! The upper layer (`E_u`) links each vertex to at least `2f+1` vertices of
//! the previous round and drives the commit order. The lower layer (`E_l`)
//! links a transaction to the vertices that defined the versions it derives
//! from.

mod commit;
pub mod keys;
pub mod log;
mod state;
pub mod transaction;
pub mod vertex;

use std::fmt;

use thiserror::Error;

use crate::cid::Cid;

pub use commit::{wave_first_round, wave_last_round};
pub use keys::{derive_signing_key, Keyring};
pub use log::{replay_log, LedgerLog, LogError};
pub use state::{LedgerState, VersionInfo};
pub use transaction::{fork_child_cid, fork_children, merge_version_cid, Transaction, TxBody, TxKind};
pub use vertex::Vertex;

pub type NodeId = u32;

/// Rounds per wave.
pub const WAVE_LEN: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LedgerConfig {
    pub n: u32,
    pub f: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid network size: need N >= 3f+1 and N >= 1, got N={n} f={f}")]
pub struct ConfigError {
    pub n: u32,
    pub f: u32,
}

impl LedgerConfig {
    pub fn new(n: u32, f: u32) -> Result<Self, ConfigError> {
        if n == 0 || (n as u64) < 3 * f as u64 + 1 {
            return Err(ConfigError { n, f });
        }
        Ok(LedgerConfig { n, f })
    }

    /// Largest tolerated `f` for `n` nodes.
    pub fn max_faulty(n: u32) -> u32 {
        n.saturating_sub(1) / 3
    }

    pub fn quorum(&self) -> usize {
        2 * self.f as usize + 1
    }
}

/// Why a transaction is invalid.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("bad-signature")]
    BadSignature,
    #[error("unknown-version: {0}")]
    UnknownVersion(Cid),
    #[error("cross-file-merge: origins {left} and {right}")]
    CrossFileMerge { left: Cid, right: Cid },
    #[error("merge-same-version: {0}")]
    MergeSameVersion(Cid),
    #[error("empty-fork")]
    EmptyFork,
    #[error("duplicate-fork-child: {0}")]
    DuplicateForkChild(Cid),
    #[error("fork-child-mismatch: child {index} is not derived from its parent")]
    ForkChildMismatch { index: usize },
    #[error("duplicate-version: {0}")]
    DuplicateVersion(Cid),
    #[error("bad-cid-tag: {field} has tag {tag}")]
    BadCidTag { field: &'static str, tag: &'static str },
}

impl Violation {
    pub fn rule(&self) -> &'static str {
        match self {
            Violation::BadSignature => "bad-signature",
            Violation::UnknownVersion(_) => "unknown-version",
            Violation::CrossFileMerge { .. } => "cross-file-merge",
            Violation::MergeSameVersion(_) => "merge-same-version",
            Violation::EmptyFork => "empty-fork",
            Violation::DuplicateForkChild(_) => "duplicate-fork-child",
            Violation::ForkChildMismatch { .. } => "fork-child-mismatch",
            Violation::DuplicateVersion(_) => "duplicate-version",
            Violation::BadCidTag { .. } => "bad-cid-tag",
        }
    }
}

/// Why a vertex was not inserted.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Rejection {
    #[error("insufficient-upper-parents: {got} < {need}")]
    InsufficientUpperParents { got: usize, need: usize },
    #[error("duplicate-author-round: node {author} round {round}")]
    DuplicateAuthorRound { author: NodeId, round: u64 },
    #[error("unknown-parent: {0}")]
    UnknownParent(Cid),
    #[error("bad-parent-round: parent {parent} is not in round {expected}")]
    BadParentRound { parent: Cid, expected: u64 },
    #[error("unknown-author: {0}")]
    UnknownAuthor(NodeId),
    #[error("invalid-transaction: {0}")]
    InvalidTransaction(Violation),
}

impl Rejection {
    pub fn reason(&self) -> &'static str {
        match self {
            Rejection::InsufficientUpperParents { .. } => "insufficient-upper-parents",
            Rejection::DuplicateAuthorRound { .. } => "duplicate-author-round",
            Rejection::UnknownParent(_) => "unknown-parent",
            Rejection::BadParentRound { .. } => "bad-parent-round",
            Rejection::UnknownAuthor(_) => "unknown-author",
            Rejection::InvalidTransaction(_) => "invalid-transaction",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("version not found: {0}")]
pub struct UnknownVersion(pub Cid);

impl fmt::Display for LedgerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N={} f={}", self.n, self.f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_bounds() {
        assert!(LedgerConfig::new(4, 1).is_ok());
        assert!(LedgerConfig::new(1, 0).is_ok());
        assert!(LedgerConfig::new(3, 1).is_err());
        assert!(LedgerConfig::new(0, 0).is_err());
        assert_eq!(LedgerConfig::max_faulty(4), 1);
        assert_eq!(LedgerConfig::max_faulty(10), 3);
        assert_eq!(LedgerConfig::max_faulty(1), 0);
        assert_eq!(LedgerConfig::new(7, 2).unwrap().quorum(), 5);
    }
}
