//! Deterministic RNG stream derivation.
//!
//! Every random quantity in the crate is drawn from a stream addressed by a
//! master seed and an integer path (e.g. `[iteration, start_state, rep]`).
//! The map `(seed, path) -> stream` is a pure function of its arguments, so
//! results are bit-identical regardless of worker count or platform.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive an independent RNG for the given address.
///
/// The 32-byte ChaCha key is SHA-256 of the little-endian encoding of
/// `seed` followed by `path`, which makes distinct addresses collide only
/// with cryptographically negligible probability.
pub fn derive_rng(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for part in path {
        hasher.update(part.to_le_bytes());
    }
    let key: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(key)
}

/// Derive a 64-bit subseed, for handing a whole subsystem its own seed space.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for part in path {
        hasher.update(part.to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
