//! Seeded random streams.
//!
//! Every stream is a ChaCha8 generator whose 256-bit key is the SHA-256
//! digest of `"<seed>/<purpose>/<key>"`. Streams for different purposes or
//! tasks are independent, and the same triple gives the same stream on
//! every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha8Rng;

pub fn stream(seed: u64, purpose: &str, key: &str) -> Stream {
    let digest = Sha256::digest(format!("{seed}/{purpose}/{key}").as_bytes());
    ChaCha8Rng::from_seed(digest.into())
}

/// A child seed, for handing a whole sub-experiment its own seed space.
pub fn derive_seed(seed: u64, purpose: &str, key: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}/{purpose}/{key}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
