use super::{Sequence, TokenId, Vocab};
use crate::error::{Error, Result};

/// Row-stochastic `L × V` matrix of per-position categorical predictions,
/// stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    len: usize,
    vocab: usize,
    data: Vec<f64>,
}

const ROW_SUM_TOL: f64 = 1e-9;

impl ProbMatrix {
    /// Builds a matrix from row-major data without checking row sums.
    pub fn from_rows(len: usize, vocab: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != len * vocab {
            return Err(Error::LengthMismatch {
                expected: len * vocab,
                actual: data.len(),
            });
        }
        Ok(ProbMatrix { len, vocab, data })
    }

    pub fn uniform(len: usize, vocab: usize) -> Self {
        ProbMatrix {
            len,
            vocab,
            data: vec![1.0 / vocab as f64; len * vocab],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn row(&self, pos: usize) -> &[f64] {
        &self.data[pos * self.vocab..(pos + 1) * self.vocab]
    }

    pub fn row_mut(&mut self, pos: usize) -> &mut [f64] {
        &mut self.data[pos * self.vocab..(pos + 1) * self.vocab]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Highest-probability token at `pos`; ties go to the lower id.
    pub fn argmax(&self, pos: usize) -> TokenId {
        let row = self.row(pos);
        let mut best = 0usize;
        for (v, &p) in row.iter().enumerate().skip(1) {
            if p > row[best] {
                best = v;
            }
        }
        best as TokenId
    }

    pub fn max_prob(&self, pos: usize) -> f64 {
        self.row(pos).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Checks the invariants every denoiser output must satisfy: rows sum to
    /// one, entries are nonnegative, the mask column is zero on masked rows,
    /// and rows at unmasked positions are one-hot on the observed token.
    pub fn check_constraints(&self, z: &Sequence, vocab: &Vocab) -> Result<()> {
        if self.vocab != vocab.size() {
            return Err(Error::LengthMismatch {
                expected: vocab.size(),
                actual: self.vocab,
            });
        }
        if self.len != z.len() {
            return Err(Error::LengthMismatch {
                expected: z.len(),
                actual: self.len,
            });
        }
        let mask = vocab.mask_id() as usize;
        for pos in 0..self.len {
            let row = self.row(pos);
            let fail = |reason: String| Err(Error::Constraint { row: pos, reason });
            if let Some(p) = row.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
                return fail(format!("entry {p} is not a nonnegative finite number"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return fail(format!("row sums to {sum}"));
            }
            let observed = z.get(pos);
            if vocab.is_mask(observed) {
                if row[mask] != 0.0 {
                    return fail(format!("mask probability {} on a masked row", row[mask]));
                }
            } else {
                let one_hot = row
                    .iter()
                    .enumerate()
                    .all(|(v, &p)| p == if v == observed as usize { 1.0 } else { 0.0 });
                if !one_hot {
                    return fail(format!("unmasked row is not one-hot on token {observed}"));
                }
            }
        }
        Ok(())
    }
}

/// Zeroes the mask column and renormalizes masked rows, and replaces rows at
/// unmasked positions with a one-hot on the observed token.
pub fn enforce_denoiser_constraints(
    mut mu: ProbMatrix,
    z: &Sequence,
    vocab: &Vocab,
) -> Result<ProbMatrix> {
    if mu.vocab != vocab.size() || mu.len != z.len() {
        return Err(Error::LengthMismatch {
            expected: z.len() * vocab.size(),
            actual: mu.data.len(),
        });
    }
    let mask = vocab.mask_id() as usize;
    for pos in 0..mu.len {
        let observed = z.get(pos);
        let row = mu.row_mut(pos);
        if vocab.is_mask(observed) {
            row[mask] = 0.0;
            let sum: f64 = row.iter().sum();
            if !(sum > 0.0 && sum.is_finite()) {
                return Err(Error::Constraint {
                    row: pos,
                    reason: format!("masked row has mass {sum} after removing the mask column"),
                });
            }
            // Already-normalized rows are left untouched so enforcement is idempotent.
            if sum != 1.0 {
                row.iter_mut().for_each(|p| *p /= sum);
            }
        } else {
            row.iter_mut().for_each(|p| *p = 0.0);
            row[observed as usize] = 1.0;
        }
    }
    Ok(mu)
}
