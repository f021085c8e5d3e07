//! Node signing keys.
//!
//! Keys are derived deterministically from the simulation seed so that a
//! workspace or scenario can be replayed; this is a simulator, not a wallet.

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use sha2::{Digest, Sha256};

use super::NodeId;

pub fn derive_signing_key(seed: u64, node: NodeId) -> SigningKey {
    let mut h = Sha256::new();
    h.update(b"filedag/node-key/v1");
    h.update(seed.to_le_bytes());
    h.update(node.to_le_bytes());
    SigningKey::from_bytes(&h.finalize().into())
}

/// Public keys of every node, indexed by node id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Keyring {
    keys: Vec<VerifyingKey>,
}

impl Keyring {
    pub fn new(keys: Vec<VerifyingKey>) -> Self {
        Keyring { keys }
    }

    pub fn derive(seed: u64, n: u32) -> Self {
        Keyring { keys: (0..n).map(|i| derive_signing_key(seed, i).verifying_key()).collect() }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn get(&self, node: NodeId) -> Option<&VerifyingKey> {
        self.keys.get(node as usize)
    }

    pub fn verify(&self, node: NodeId, msg: &[u8], sig: &[u8; 64]) -> bool {
        match self.get(node) {
            Some(k) => k.verify(msg, &Signature::from_bytes(sig)).is_ok(),
            None => false,
        }
    }
}

pub fn sign(key: &SigningKey, msg: &[u8]) -> [u8; 64] {
    key.sign(msg).to_bytes()
}
