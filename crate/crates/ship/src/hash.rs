//! Stable 64-bit hashing (FNV-1a). Used for patient-level split assignment,
//! per-patient generator seeds, and configuration fingerprints, all of which
//! must not change across Rust releases the way `DefaultHasher` may.

pub fn stable_hash64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Hash of several byte fields, kept order-sensitive by length-prefixing.
pub fn stable_hash64_parts(parts: &[&[u8]]) -> u64 {
    let mut buf = Vec::new();
    for p in parts {
        buf.extend_from_slice(&(p.len() as u64).to_le_bytes());
        buf.extend_from_slice(p);
    }
    stable_hash64(&buf)
}

/// Hex fingerprint of arbitrary content (16 hex chars).
pub fn fingerprint(bytes: &[u8]) -> String {
    format!("{:016x}", stable_hash64(bytes))
}
