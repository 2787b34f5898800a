//! Seeded, splittable random streams.
//!
//! Every stream is a ChaCha8 keystream: the key comes from the master seed
//! and the 64-bit stream id from a hash of the caller's tags, so
//! `(experiment, seed, episode)` tuples map to independent, reproducible
//! sequences regardless of the order or thread they are drawn on.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Well-known tags so unrelated consumers never collide.
pub mod tag {
    pub const ENV_LAYOUT: u64 = 0x454e_565f_4c41_594f;
    pub const EPISODE: u64 = 0x4550_4953_4f44_4521;
    pub const MODEL: u64 = 0x4d4f_4445_4c5f_494e;
    pub const REPLAY: u64 = 0x5245_504c_4159_5f5f;
    pub const BOOTSTRAP: u64 = 0x424f_4f54_5354_5250;
    pub const MDP: u64 = 0x4d44_505f_4745_4e5f;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes an ordered list of tags into one stream id.
pub fn mix(tags: &[u64]) -> u64 {
    tags.iter()
        .fold(0x6a09_e667_f3bc_c908, |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// Derives the stream for `tags` under `seed`.
pub fn stream(seed: u64, tags: &[u64]) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed));
    rng.set_stream(mix(tags));
    rng
}
