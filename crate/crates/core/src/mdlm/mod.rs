//! Masked diffusion primitives: vocabulary, sequences, noise schedules, the
//! forward/reverse kernels and the denoiser abstraction.

mod denoiser;
mod kernels;
mod prob;
mod schedule;

pub use denoiser::{CountingDenoiser, Denoiser, PlantedDenoiser, RandomTableDenoiser};
pub use kernels::{forward_corrupt, gamma, reverse_posterior_token, RevealPosterior};
pub use prob::{enforce_denoiser_constraints, ProbMatrix};
pub use schedule::{NoiseSchedule, ScheduleKind};

use crate::error::{Error, Result};
use crate::rng::hash_words;

pub type TokenId = u32;

/// Vocabulary of `size` ids; the last id is the absorbing mask token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Vocab {
    size: usize,
}

impl Vocab {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidVocab(size));
        }
        if size > TokenId::MAX as usize {
            return Err(Error::domain(format!("vocabulary size {size} exceeds token id range")));
        }
        Ok(Vocab { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn mask_id(&self) -> TokenId {
        (self.size - 1) as TokenId
    }

    pub fn is_mask(&self, token: TokenId) -> bool {
        token == self.mask_id()
    }

    /// Number of real (non-mask) tokens.
    pub fn real_tokens(&self) -> usize {
        self.size - 1
    }

    pub fn check_token(&self, token: TokenId) -> Result<()> {
        if (token as usize) < self.size {
            Ok(())
        } else {
            Err(Error::TokenOutOfRange {
                token,
                vocab: self.size,
            })
        }
    }
}

/// A length-L sequence of token ids. Ordering is lexicographic on the ids,
/// which is the canonical tie-break used by pruning.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct Sequence {
    tokens: Vec<TokenId>,
}

impl Sequence {
    /// Validating constructor.
    pub fn new(tokens: Vec<TokenId>, vocab: &Vocab) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::domain("sequence length must be at least 1"));
        }
        for &t in &tokens {
            vocab.check_token(t)?;
        }
        Ok(Sequence { tokens })
    }

    pub fn all_mask(len: usize, vocab: &Vocab) -> Self {
        Sequence {
            tokens: vec![vocab.mask_id(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn into_tokens(self) -> Vec<TokenId> {
        self.tokens
    }

    pub fn get(&self, pos: usize) -> TokenId {
        self.tokens[pos]
    }

    pub fn set(&mut self, pos: usize, token: TokenId) {
        self.tokens[pos] = token;
    }

    pub fn masked_count(&self, vocab: &Vocab) -> usize {
        self.tokens.iter().filter(|&&t| vocab.is_mask(t)).count()
    }

    /// Masked positions in ascending order.
    pub fn masked_positions(&self, vocab: &Vocab) -> Vec<usize> {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(_, &t)| vocab.is_mask(t))
            .map(|(i, _)| i)
            .collect()
    }

    /// Copy with one position replaced.
    pub fn with(&self, pos: usize, token: TokenId) -> Self {
        let mut out = self.clone();
        out.tokens[pos] = token;
        out
    }

    /// Platform-stable hash of the token ids, used to key per-node streams.
    pub fn canonical_hash(&self) -> u64 {
        hash_words(
            std::iter::once(self.tokens.len() as u64).chain(self.tokens.iter().map(|&t| t as u64)),
        )
    }
}

impl From<Vec<TokenId>> for Sequence {
    /// Unvalidated conversion; use [`Sequence::new`] for untrusted input.
    fn from(tokens: Vec<TokenId>) -> Self {
        Sequence { tokens }
    }
}

impl std::fmt::Display for Sequence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.tokens.iter().map(|t| t.to_string()).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_rejects_tiny() {
        assert!(matches!(Vocab::new(1), Err(Error::InvalidVocab(1))));
        let v = Vocab::new(2).unwrap();
        assert_eq!(v.mask_id(), 1);
        assert_eq!(v.real_tokens(), 1);
    }

    #[test]
    fn sequence_validation_and_mask_count() {
        let v = Vocab::new(4).unwrap();
        assert!(Sequence::new(vec![0, 4], &v).is_err());
        assert!(Sequence::new(vec![], &v).is_err());
        let s = Sequence::new(vec![0, 3, 2, 3], &v).unwrap();
        assert_eq!(s.masked_count(&v), 2);
        assert_eq!(s.masked_positions(&v), vec![1, 3]);
        assert_eq!(Sequence::all_mask(5, &v).masked_count(&v), 5);
    }

    #[test]
    fn lexicographic_order() {
        let a = Sequence::from(vec![0, 1]);
        let b = Sequence::from(vec![1, 0]);
        assert!(a < b);
    }

    #[test]
    fn canonical_hash_is_order_sensitive() {
        let a = Sequence::from(vec![0, 1]);
        let b = Sequence::from(vec![1, 0]);
        assert_ne!(a.canonical_hash(), b.canonical_hash());
        assert_eq!(a.canonical_hash(), Sequence::from(vec![0, 1]).canonical_hash());
    }
}
