//! Hash-challenge proof of storage.
//!
//! This is a stand-in for a real proof-of-replication scheme: the proof is
//! `SHA-256(content || challenge)`, so answering a fresh challenge requires
//! the exact content bytes.

use rand::RngCore;
use sha2::{Digest, Sha256};

use crate::cid::Cid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StorageProof {
    pub cid: Cid,
    pub challenge: [u8; 32],
    pub proof: [u8; 32],
}

pub fn proof_digest(content: &[u8], challenge: &[u8; 32]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(content);
    h.update(challenge);
    h.finalize().into()
}

pub fn fresh_challenge(rng: &mut impl RngCore) -> [u8; 32] {
    let mut c = [0u8; 32];
    rng.fill_bytes(&mut c);
    c
}

impl StorageProof {
    pub fn prove(cid: Cid, content: &[u8], challenge: [u8; 32]) -> Self {
        StorageProof { cid, challenge, proof: proof_digest(content, &challenge) }
    }

    /// Checks the proof against content the verifier holds itself.
    pub fn verify(&self, cid: &Cid, challenge: &[u8; 32], content: &[u8]) -> bool {
        self.cid == *cid && self.challenge == *challenge && self.proof == proof_digest(content, challenge)
    }
}
