//! Keyed random streams.
//!
//! Every stream is a ChaCha20 generator whose 256-bit key is
//! `SHA-256(domain || 0x00 || seed_le64 || len_le64(id) || id || index_le64 || attempt_le64)`.
//! ChaCha20 is counter based, so a stream depends only on its key and never on
//! the order in which other streams were consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha20Rng;

pub const NOISE_DOMAIN: &str = "monobox/noise/v1";
pub const SAMPLE_DOMAIN: &str = "monobox/sample/v1";
pub const INIT_DOMAIN: &str = "monobox/init/v1";
pub const SHUFFLE_DOMAIN: &str = "monobox/shuffle/v1";

pub fn stream_key(domain: &str, seed: u64, id: &str, index: u64, attempt: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(domain.as_bytes());
    hasher.update([0u8]);
    hasher.update(seed.to_le_bytes());
    hasher.update((id.len() as u64).to_le_bytes());
    hasher.update(id.as_bytes());
    hasher.update(index.to_le_bytes());
    hasher.update(attempt.to_le_bytes());
    hasher.finalize().into()
}

pub fn keyed_stream(domain: &str, seed: u64, id: &str, index: u64, attempt: u64) -> StreamRng {
    ChaCha20Rng::from_seed(stream_key(domain, seed, id, index, attempt))
}
