//! Child seeds derived from one top-level seed by labeled hashing.

use sha2::{Digest, Sha256};

/// First eight bytes (little endian) of `SHA-256(base_le || label)`.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
