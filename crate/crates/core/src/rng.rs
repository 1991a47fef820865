//! Named random substreams derived from one global seed.
//!
//! Each consumer asks for its own stream by name, so adding a consumer never
//! shifts the numbers another one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn substream_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

pub fn substream(seed: u64, name: &str) -> Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(seed, name))
}
