//! Token ids for the embedding table.
//!
//! Ids depend only on the token text: the fixed punctuation and keywords get
//! reserved slots and everything else (variables, labels, literals) is hashed
//! into the remaining buckets.

use serde::{Deserialize, Serialize};

const RESERVED: [&str; 12] = [
    "=", "+", "-", "*", "<", "==", ":", "load", "store", "if", "goto", "halt",
];

/// Buckets in [`Vocab::standard`].
pub const STANDARD_VOCAB_SIZE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    size: usize,
}

impl Vocab {
    pub fn new(size: usize) -> Vocab {
        assert!(size > RESERVED.len(), "vocabulary needs room past the reserved tokens");
        Vocab { size }
    }

    pub fn standard() -> Vocab {
        Vocab::new(STANDARD_VOCAB_SIZE)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn id(&self, token: &str) -> usize {
        if let Some(i) = RESERVED.iter().position(|r| *r == token) {
            return i;
        }
        // FNV-1a, stable across platforms and runs.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in token.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        RESERVED.len() + (h % (self.size - RESERVED.len()) as u64) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_and_hashed_ids() {
        let v = Vocab::standard();
        assert_eq!(v.id("="), 0);
        assert_eq!(v.id("halt"), 11);
        let a = v.id("a");
        assert!((12..STANDARD_VOCAB_SIZE).contains(&a));
        assert_eq!(a, v.id("a"));
        assert_ne!(v.id("a"), v.id("b"));
    }
}
