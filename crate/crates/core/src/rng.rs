//! Counter-based random streams.
//!
//! Every random draw in the engine comes from a [`Stream`] whose identity is a
//! hash of a key (seed plus labels). Two streams built from the same key yield
//! the same values no matter which thread asks for them or what other streams
//! exist, which is what makes coupled tree-search runs and parallel trials
//! reproducible.

use rand::RngCore;

use crate::mdlm::Sequence;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a word sequence. Stable across platforms and
/// compiler versions, unlike `std::hash`.
pub fn hash_words(words: impl IntoIterator<Item = u64>) -> u64 {
    let mut h = 0x6A09_E667_F3BC_C909u64;
    for w in words {
        h = mix64(h ^ mix64(w.wrapping_add(GOLDEN)));
    }
    h
}

/// Uniform draw in (0, 1) from any generator, using the top 53 bits.
#[inline]
pub fn open_unit<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Uniform index in `0..n` from one [`open_unit`] draw. `n` must be nonzero.
#[inline]
pub fn uniform_index<R: RngCore + ?Sized>(rng: &mut R, n: usize) -> usize {
    debug_assert!(n > 0);
    ((open_unit(rng) * n as f64) as usize).min(n - 1)
}

/// Draws a token from a probability row by inversion of one uniform.
/// Rounding slack at the top end falls on the last positive entry.
pub fn sample_categorical(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// A deterministic pseudo-random stream: output `i` is `mix64(id ^ (i+1)·φ)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stream {
    id: u64,
    counter: u64,
}

impl Stream {
    pub fn from_key(words: &[u64]) -> Self {
        Stream {
            id: hash_words(words.iter().copied()),
            counter: 0,
        }
    }

    /// Stream for `(seed, label)`, e.g. one independent run of a baseline.
    pub fn new(seed: u64, label: u64) -> Self {
        Self::from_key(&[seed, label])
    }

    pub fn derive(&self, label: u64) -> Self {
        Self::from_key(&[self.id, label])
    }

    #[inline]
    fn next(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(GOLDEN);
        mix64(self.id ^ self.counter)
    }

    /// Uniform draw in the open interval (0, 1); never returns 0 or 1.
    #[inline]
    pub fn open_unit(&mut self) -> f64 {
        open_unit(self)
    }

    /// Uniform index in `0..n`. `n` must be nonzero.
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        uniform_index(self, n)
    }
}

impl RngCore for Stream {
    fn next_u32(&mut self) -> u32 {
        (self.next() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

/// Per-node stream factory for tree search.
///
/// The stream for a node is keyed by `(seed, level, state)`, so a state that
/// appears in two runs sharing a seed receives identical draws in both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRng {
    seed: u64,
}

const NODE_DOMAIN: u64 = 0x4E4F_4445; // "NODE"

impl NodeRng {
    pub fn new(seed: u64) -> Self {
        NodeRng { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, level: usize, state: &Sequence) -> Stream {
        Stream::from_key(&[NODE_DOMAIN, self.seed, level as u64, state.canonical_hash()])
    }
}
