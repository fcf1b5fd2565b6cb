//! Stable derivation of per-purpose seeds from one global seed.

/// FNV-1a over the purpose label, folded into the seed with a SplitMix64
/// finalizer. Stable across platforms and releases.
pub fn derive_seed(seed: u64, purpose: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in purpose.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(seed ^ splitmix64(h))
}

/// Seed for item `index` of a purpose, e.g. one record within an epoch.
pub fn derive_indexed(seed: u64, purpose: &str, index: u64) -> u64 {
    splitmix64(derive_seed(seed, purpose) ^ splitmix64(index))
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
