//! Seeded random substreams derived from one global seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const CHIP: &str = "chip";
pub const INIT: &str = "init";
pub const SHUFFLE: &str = "shuffle";
pub const SYNTH: &str = "synth";
pub const SPLIT: &str = "split";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the named substream `name` under `seed`, further keyed by `index`.
pub fn derive_seed(seed: u64, name: &str, index: u64) -> u64 {
    // FNV-1a over the name, mixed with the global seed and index.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(seed ^ h) ^ index)
}

pub fn substream(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, name, index))
}
