//! Seed splitting. Every random stream in a run derives from one 64-bit seed:
//! stream `k` of seed `s` is seeded with `splitmix64(s ^ splitmix64(k))`.

/// Stream ids used by the trainer.
pub mod stream {
    pub const NETWORK_INIT: u64 = 0;
    pub const LEARNER: u64 = 1;
    /// Environment worker `i` uses `ENV_BASE + i` for episode seeds.
    pub const ENV_BASE: u64 = 0x100;
    /// Environment worker `i` uses `ACTOR_BASE + i` for exploration.
    pub const ACTOR_BASE: u64 = 0x200;
    pub const EVAL: u64 = 0x300;
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn split_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}
