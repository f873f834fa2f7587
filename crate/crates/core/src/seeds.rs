//! Seed derivation. Every random stream in the crate is keyed by a master
//! seed plus a stream index, so reordering or parallelising work never
//! changes what a given stream produces.

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for sub-stream `index` of `master`.
pub fn derive(master: u64, index: u64) -> u64 {
    mix(mix(master) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03))
}
