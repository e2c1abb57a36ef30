//! Stable 64-bit seed derivation.
//!
//! Every random stream in the crate is keyed by a list of labelled parts, so
//! independent jobs never share a stream and results do not depend on
//! scheduling order or platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Hash an ordered list of parts to a 64-bit seed.
///
/// Parts are length-prefixed, so `["ab", "c"]` and `["a", "bc"]` differ.
pub fn hash64<S: AsRef<[u8]>>(parts: &[S]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        let p = p.as_ref();
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(first)
}

pub fn rng_for<S: AsRef<[u8]>>(parts: &[S]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(hash64(parts))
}

/// Hex SHA-256 of a byte buffer.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
