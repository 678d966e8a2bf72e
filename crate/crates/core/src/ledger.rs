use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mdlm::{Denoiser, ProbMatrix, Sequence};

/// Exact count of denoiser evaluations (NFE), the compute unit every method
/// is compared in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NfeLedger {
    evals: u64,
}

impl NfeLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn evals(&self) -> u64 {
        self.evals
    }

    /// Evaluates the denoiser and records the call. Debug builds also check
    /// the output constraints on every call.
    pub fn eval<D: Denoiser + ?Sized>(&mut self, den: &D, z: &Sequence, t: f64) -> Result<ProbMatrix> {
        self.evals += 1;
        let mu = den.eval(z, t)?;
        debug_assert!(
            mu.check_constraints(z, &den.vocab()).is_ok(),
            "denoiser output violates constraints: {:?}",
            mu.check_constraints(z, &den.vocab())
        );
        Ok(mu)
    }

    pub fn absorb(&mut self, other: NfeLedger) {
        self.evals += other.evals;
    }
}
