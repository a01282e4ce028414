//! Small shared helpers: seed derivation and stable hashing.

/// SplitMix64 finalizer; used to derive independent stream seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed for sub-task `index` of a run seeded with `base`.
pub fn mix_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ index.wrapping_mul(0xA076_1D64_78BD_642F))
}

/// FNV-1a over a byte slice; used for config fingerprints in file headers.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Time grid comparison tolerance. Observation and rebalancing times are
/// built from integer step counts, so anything within this slack is the
/// same calendar instant.
pub const TIME_EPS: f64 = 1e-9;
