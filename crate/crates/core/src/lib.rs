//! Reward-aligned tree search for masked diffusion language models.
//!
//! The engine branches only at first-hitting unmasking events
//! ([`search::unmask_branch`]), scores partially masked children by filling the
//! remaining masks with the denoiser's argmax ([`search::resubstitute_score`]),
//! and keeps the best nodes per level ([`search::treasure_search`]). Baselines
//! ([`baselines`]) and the statistical oracles in [`verify`] share the same
//! denoiser, reward and NFE-ledger interfaces.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod ledger;
pub mod mdlm;
pub mod rewards;
pub mod rng;
pub mod samplers;
pub mod search;
pub mod verify;

pub use error::{Error, Result};
pub use ledger::NfeLedger;
pub use mdlm::{Denoiser, NoiseSchedule, ProbMatrix, Sequence, TokenId, Vocab};
pub use rewards::Reward;
