use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand_distr::{Distribution, Gamma};

use super::{enforce_denoiser_constraints, ProbMatrix, Sequence, Vocab};
use crate::error::{Error, Result};
use crate::rng::Stream;

/// A denoiser `x_θ(z, t)`: per-position categorical predictions for a
/// partially masked sequence at time `t`.
///
/// Implementations must be pure: identical `(z, t)` gives bit-identical
/// output, and every returned matrix satisfies the constraints checked by
/// [`ProbMatrix::check_constraints`].
pub trait Denoiser: Send + Sync {
    fn vocab(&self) -> Vocab;

    fn eval(&self, z: &Sequence, t: f64) -> Result<ProbMatrix>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn vocab(&self) -> Vocab {
        (**self).vocab()
    }
    fn eval(&self, z: &Sequence, t: f64) -> Result<ProbMatrix> {
        (**self).eval(z, t)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Arc<D> {
    fn vocab(&self) -> Vocab {
        (**self).vocab()
    }
    fn eval(&self, z: &Sequence, t: f64) -> Result<ProbMatrix> {
        (**self).eval(z, t)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn vocab(&self) -> Vocab {
        (**self).vocab()
    }
    fn eval(&self, z: &Sequence, t: f64) -> Result<ProbMatrix> {
        (**self).eval(z, t)
    }
}

/// Test fixture that knows the answer: at a masked position the planted
/// target token gets `1 − ε(t)` and the other real tokens share `ε(t)`
/// equally, with `ε(t) = eps0 · t`.
#[derive(Debug, Clone)]
pub struct PlantedDenoiser {
    target: Sequence,
    eps0: f64,
    vocab: Vocab,
}

impl PlantedDenoiser {
    pub fn new(target: Sequence, eps0: f64, vocab: Vocab) -> Result<Self> {
        if !(0.0..1.0).contains(&eps0) {
            return Err(Error::domain(format!("eps0 must lie in [0, 1), got {eps0}")));
        }
        for &t in target.tokens() {
            vocab.check_token(t)?;
            if vocab.is_mask(t) {
                return Err(Error::domain("planted target contains a mask token"));
            }
        }
        Ok(PlantedDenoiser {
            target,
            eps0,
            vocab,
        })
    }

    pub fn target(&self) -> &Sequence {
        &self.target
    }
}

impl Denoiser for PlantedDenoiser {
    fn vocab(&self) -> Vocab {
        self.vocab
    }

    fn eval(&self, z: &Sequence, t: f64) -> Result<ProbMatrix> {
        if z.len() != self.target.len() {
            return Err(Error::LengthMismatch {
                expected: self.target.len(),
                actual: z.len(),
            });
        }
        let v = self.vocab.size();
        let others = v - 2;
        let eps = if others == 0 {
            0.0
        } else {
            self.eps0 * t.clamp(0.0, 1.0)
        };
        let mut mu = ProbMatrix::from_rows(z.len(), v, vec![0.0; z.len() * v])?;
        for pos in 0..z.len() {
            if !self.vocab.is_mask(z.get(pos)) {
                continue;
            }
            let row = mu.row_mut(pos);
            let share = if others == 0 { 0.0 } else { eps / others as f64 };
            row[..v - 1].iter_mut().for_each(|p| *p = share);
            row[self.target.get(pos) as usize] = 1.0 - eps;
        }
        enforce_denoiser_constraints(mu, z, &self.vocab)
    }
}

const TABLE_DOMAIN: u64 = 0x5441_424C; // "TABL"

/// Deterministic pseudo-random denoiser: each masked row is a
/// Dirichlet(concentration) draw keyed by `(seed, position, state, time bucket)`.
#[derive(Debug, Clone)]
pub struct RandomTableDenoiser {
    seed: u64,
    gamma: Gamma<f64>,
    vocab: Vocab,
}

impl RandomTableDenoiser {
    pub fn new(seed: u64, concentration: f64, vocab: Vocab) -> Result<Self> {
        let gamma = Gamma::new(concentration, 1.0).map_err(|_| {
            Error::domain(format!("concentration must be positive and finite, got {concentration}"))
        })?;
        Ok(RandomTableDenoiser { seed, gamma, vocab })
    }

    /// Time resolution of the hash key; inputs closer than this share a row.
    pub const TIME_RESOLUTION: f64 = 1e-6;

    fn time_bucket(t: f64) -> u64 {
        (t.clamp(0.0, 1.0) / Self::TIME_RESOLUTION).round() as u64
    }
}

impl Denoiser for RandomTableDenoiser {
    fn vocab(&self) -> Vocab {
        self.vocab
    }

    fn eval(&self, z: &Sequence, t: f64) -> Result<ProbMatrix> {
        let v = self.vocab.size();
        let state = z.canonical_hash();
        let bucket = Self::time_bucket(t);
        let mut mu = ProbMatrix::from_rows(z.len(), v, vec![0.0; z.len() * v])?;
        for pos in 0..z.len() {
            if !self.vocab.is_mask(z.get(pos)) {
                continue;
            }
            let mut stream =
                Stream::from_key(&[TABLE_DOMAIN, self.seed, pos as u64, state, bucket]);
            let row = mu.row_mut(pos);
            let mut total = 0.0;
            for p in row[..v - 1].iter_mut() {
                *p = self.gamma.sample(&mut stream);
                total += *p;
            }
            if !(total > 0.0) {
                row[..v - 1].iter_mut().for_each(|p| *p = 1.0);
                total = (v - 1) as f64;
            }
            row[..v - 1].iter_mut().for_each(|p| *p /= total);
        }
        enforce_denoiser_constraints(mu, z, &self.vocab)
    }
}

/// Wraps a denoiser and counts every `eval` call; used to audit NFE ledgers.
#[derive(Debug)]
pub struct CountingDenoiser<D> {
    inner: D,
    calls: AtomicU64,
}

impl<D: Denoiser> CountingDenoiser<D> {
    pub fn new(inner: D) -> Self {
        CountingDenoiser {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }

    pub fn inner(&self) -> &D {
        &self.inner
    }
}

impl<D: Denoiser> Denoiser for CountingDenoiser<D> {
    fn vocab(&self) -> Vocab {
        self.inner.vocab()
    }

    fn eval(&self, z: &Sequence, t: f64) -> Result<ProbMatrix> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.eval(z, t)
    }
}
