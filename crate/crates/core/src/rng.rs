//! Seeded substreams. Every random decision in the crate draws from a
//! stream derived from (master seed, purpose tag, index) so that runs are
//! reproducible and independent stages do not share state.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_PARAM_INIT: u64 = 1;
pub const STREAM_EPOCH_SHUFFLE: u64 = 2;
pub const STREAM_NEG_SUBSAMPLE: u64 = 3;
pub const STREAM_GEN_GLOBAL: u64 = 4;
pub const STREAM_GEN_VIDEO: u64 = 5;
pub const STREAM_SANITY_PERM: u64 = 6;
pub const STREAM_RANDOM_RANKING: u64 = 7;

/// Derives an independent ChaCha stream from a master seed.
pub fn substream(master: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&tag.to_le_bytes());
    seed[16..24].copy_from_slice(&index.to_le_bytes());
    // Mix so that (master, tag, index) permutations land far apart even
    // for small integer inputs.
    seed[24..32].copy_from_slice(&splitmix(master ^ tag.rotate_left(17) ^ index.rotate_left(41)).to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
