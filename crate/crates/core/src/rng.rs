//! Deterministic random streams.
//!
//! Every random draw in a campaign comes from a ChaCha8 stream whose 256-bit
//! key is the little-endian concatenation
//!
//! ```text
//! master_seed (8 bytes) | point index (8 bytes) | sample index (8 bytes) | b"pcm-lab\0"
//! ```
//!
//! The map from `(seed, point, sample)` to key is injective, so distinct
//! samples never share a stream and results do not depend on how samples are
//! scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

const DOMAIN: &[u8; 8] = b"pcm-lab\0";

pub fn stream(seed: u64, point: u64, sample: u64) -> Stream {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&point.to_le_bytes());
    key[16..24].copy_from_slice(&sample.to_le_bytes());
    key[24..].copy_from_slice(DOMAIN);
    ChaCha8Rng::from_seed(key)
}
