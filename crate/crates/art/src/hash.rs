//! FNV-1a 64-bit hashing, used everywhere a stable, platform-independent
//! hash is required (prompt fingerprints, feature slots, split assignment).

pub const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Hash `bytes` starting from `state` (pass [`FNV_OFFSET_BASIS`] for a fresh hash).
pub fn fnv1a64_continue(mut state: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        state ^= u64::from(b);
        state = state.wrapping_mul(FNV_PRIME);
    }
    state
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_continue(FNV_OFFSET_BASIS, bytes)
}
