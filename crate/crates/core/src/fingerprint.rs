//! FNV-1a 64-bit fingerprints for run manifests and provenance tracking.

const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a hash of a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Hex fingerprint of an image set (images then labels).
pub fn fingerprint_set(set: &crate::data::ImageSet) -> String {
    let mut h = OFFSET;
    for &b in set.raw_data() {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    for &b in set.labels() {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    format!("{h:016x}")
}
