//! Content hashes that tie outputs to the configuration and data that
//! produced them.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Fingerprint of any serialisable value via its canonical JSON encoding.
/// Struct fields serialise in declaration order, so the encoding is stable.
pub fn of_json<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("plain data serialises");
    sha256_hex(&json)
}

/// First 16 hex digits, for log lines and file names.
pub fn short(fp: &str) -> &str {
    &fp[..fp.len().min(16)]
}

/// Deterministic 64-bit sub-seed derived from a parent seed and a label.
pub fn derive_seed(parent: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(parent.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(b)
}
