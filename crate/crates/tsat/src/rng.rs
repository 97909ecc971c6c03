//! Seed derivation. All randomness in the crate flows from one master seed;
//! sub-seeds for independent components (init, shuffle, dropout, noise) are
//! derived with a splitmix64 step so that streams never alias.

/// Derive a sub-seed for a named stream from a master seed.
///
/// The same `(master, stream)` pair always yields the same seed, and distinct
/// streams decorrelate even for adjacent master seeds.
pub fn seed_stream(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(stream.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream tags used across the crate.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const GRADCHECK: u64 = 5;
}
