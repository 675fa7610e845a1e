//! Passive OS fingerprinting toolkit: fingerprint data model, information
//! gain analysis, single- and multi-session classifiers, a from-scratch
//! random forest, obfuscation simulation, and a synthetic corpus generator.

pub mod error;
pub mod experiment;
pub mod fingerprint;
pub mod forest;
pub mod infogain;
pub mod obfuscate;
pub mod session;
pub mod single_session;
pub mod store;
pub mod synth;
pub mod windows;

pub use fingerprint::{parse_canonical, Element, Fingerprint, Protocol};
pub use session::{Corpus, SessionKey, SessionRecord};
pub use store::{CategoryLabel, CountStore};

/// FNV-1a 64-bit hash; used wherever a stable, dependency-free hash of
/// strings or byte material is needed (rng substreams, dictionary hashes).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Mix a sequence of u64 words into one seed via FNV over their LE bytes.
pub fn mix_seed(words: &[u64]) -> u64 {
    let mut bytes = Vec::with_capacity(words.len() * 8);
    for w in words {
        bytes.extend_from_slice(&w.to_le_bytes());
    }
    fnv1a64(&bytes)
}
