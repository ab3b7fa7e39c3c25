//! Seed derivation. One master seed fans out to per-cell seeds through a
//! fixed, published mixing so that a sweep is reproducible from its manifest
//! alone and insensitive to execution order.
//!
//! The mixing is a SplitMix64 chain:
//!
//! ```text
//! s0 = splitmix64(master)
//! s1 = splitmix64(s0 ^ depth)
//! s2 = splitmix64(s1 ^ lr_index)
//! s3 = splitmix64(s2 ^ a_index)
//! cell_seed = splitmix64(s3 ^ seed_index)
//! ```
//!
//! Depth enters by value (it is meaningful across grids); learning rate and
//! branch constant enter by grid index (their float values are not stable
//! hash inputs). Extending a grid therefore never changes the seeds of
//! existing cells as long as the old entries keep their positions.

/// One output step of the SplitMix64 generator (Steele, Lea and Flood's
/// constants). `splitmix64(0) == 0xe220a8397b1dcdaf`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one sweep cell, per the chain documented at module level.
pub fn cell_seed(master: u64, depth: u64, lr_index: u64, a_index: u64, seed_index: u64) -> u64 {
    let mut s = splitmix64(master);
    for part in [depth, lr_index, a_index, seed_index] {
        s = splitmix64(s ^ part);
    }
    s
}
