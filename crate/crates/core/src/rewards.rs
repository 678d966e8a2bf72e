//! Hamming-Lipschitz rewards.
//!
//! Every shipped reward is total on partially masked sequences: a mask is a
//! guaranteed mismatch (target matching) or carries zero weight (lexicon), so
//! the Lipschitz constant stays valid when previous-step scoring applies the
//! reward to a state that still has masks.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdlm::Sequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPolicy {
    /// A masked position never matches anything.
    Mismatch,
    /// A masked position contributes zero.
    ZeroWeight,
}

pub trait Reward: Send + Sync {
    fn score(&self, x: &Sequence) -> Result<f64>;

    /// `β` with `|r(x) − r(y)| ≤ β·d_H(x, y)`, or `None` when unknown.
    fn lipschitz_beta(&self) -> Option<f64>;

    fn mask_policy(&self) -> MaskPolicy;
}

impl<R: Reward + ?Sized> Reward for &R {
    fn score(&self, x: &Sequence) -> Result<f64> {
        (**self).score(x)
    }
    fn lipschitz_beta(&self) -> Option<f64> {
        (**self).lipschitz_beta()
    }
    fn mask_policy(&self) -> MaskPolicy {
        (**self).mask_policy()
    }
}

impl<R: Reward + ?Sized> Reward for Arc<R> {
    fn score(&self, x: &Sequence) -> Result<f64> {
        (**self).score(x)
    }
    fn lipschitz_beta(&self) -> Option<f64> {
        (**self).lipschitz_beta()
    }
    fn mask_policy(&self) -> MaskPolicy {
        (**self).mask_policy()
    }
}

impl<R: Reward + ?Sized> Reward for Box<R> {
    fn score(&self, x: &Sequence) -> Result<f64> {
        (**self).score(x)
    }
    fn lipschitz_beta(&self) -> Option<f64> {
        (**self).lipschitz_beta()
    }
    fn mask_policy(&self) -> MaskPolicy {
        (**self).mask_policy()
    }
}

/// Number of positions where two equal-length sequences differ.
pub fn hamming(x: &Sequence, y: &Sequence) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    Ok(x.tokens()
        .iter()
        .zip(y.tokens())
        .filter(|(a, b)| a != b)
        .count())
}

/// `r(x) = #{ℓ : x^ℓ = target^ℓ}`, β = 1.
#[derive(Debug, Clone)]
pub struct TargetMatchReward {
    target: Sequence,
}

impl TargetMatchReward {
    /// The target must be mask-free; that is the caller's contract since a
    /// bare sequence does not know its vocabulary.
    pub fn new(target: Sequence) -> Self {
        TargetMatchReward { target }
    }

    pub fn target(&self) -> &Sequence {
        &self.target
    }
}

impl Reward for TargetMatchReward {
    fn score(&self, x: &Sequence) -> Result<f64> {
        let mismatches = hamming(&self.target, x)?;
        Ok((self.target.len() - mismatches) as f64)
    }

    fn lipschitz_beta(&self) -> Option<f64> {
        Some(1.0)
    }

    fn mask_policy(&self) -> MaskPolicy {
        MaskPolicy::Mismatch
    }
}

/// `r(x) = Σ_ℓ w[x^ℓ]` with the mask weight (last entry) forced to zero;
/// β = max(w) − min(w).
#[derive(Debug, Clone)]
pub struct LexiconReward {
    weights: Vec<f64>,
    beta: f64,
}

impl LexiconReward {
    pub fn new(mut weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::InvalidVocab(weights.len()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
            return Err(Error::domain(format!("lexicon weight {w} is not finite")));
        }
        *weights.last_mut().unwrap() = 0.0;
        let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = weights.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(LexiconReward {
            weights,
            beta: max - min,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl Reward for LexiconReward {
    fn score(&self, x: &Sequence) -> Result<f64> {
        x.tokens().iter().try_fold(0.0, |acc, &t| {
            self.weights
                .get(t as usize)
                .map(|w| acc + w)
                .ok_or(Error::TokenOutOfRange {
                    token: t,
                    vocab: self.weights.len(),
                })
        })
    }

    fn lipschitz_beta(&self) -> Option<f64> {
        Some(self.beta)
    }

    fn mask_policy(&self) -> MaskPolicy {
        MaskPolicy::ZeroWeight
    }
}
