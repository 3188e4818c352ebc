//! Named random sub-streams.
//!
//! Every consumer of randomness (parameter init, shuffling, dropout,
//! synthesis) derives its own generator from the run seed and a stream
//! name, so adding a consumer never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const INIT: &str = "init";
pub const SHUFFLE: &str = "shuffle";
pub const DROPOUT: &str = "dropout";
pub const SYNTH: &str = "synth";
pub const FOLDS: &str = "folds";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit seed for the stream `name` under `seed`.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, then mixed with the base seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(seed ^ splitmix64(h))
}

pub fn stream(seed: u64, name: &str) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, name))
}
