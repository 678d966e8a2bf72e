//! Baseline generation: naive parallel sampling on a γ-grid, first-hitting
//! sampling (FHS), and the first-change trial used to check the branching
//! cost and equivalence claims.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::ledger::NfeLedger;
use crate::mdlm::{gamma, Denoiser, NoiseSchedule, ProbMatrix, Sequence, TokenId};
use crate::rng::{open_unit, sample_categorical, uniform_index};

/// One step of the factorized reverse transition from time `s` to `s_next`.
///
/// Each masked position reveals independently with probability
/// `(α_{s_next} − α_s)/(1 − α_s)`; a revealed position draws its token from the
/// constrained row evaluated at the step's start state `(z, s)`.
pub fn naive_parallel_step<D, R>(
    z: &Sequence,
    s: f64,
    s_next: f64,
    den: &D,
    sched: &NoiseSchedule,
    rng: &mut R,
    ledger: &mut NfeLedger,
) -> Result<Sequence>
where
    D: Denoiser + ?Sized,
    R: RngCore + ?Sized,
{
    if !(s_next < s) {
        return Err(Error::domain(format!(
            "naive step must move backward in time, got s={s}, s_next={s_next}"
        )));
    }
    let vocab = den.vocab();
    let mu = ledger.eval(den, z, s)?;
    let from = sched.one_minus_alpha(s);
    let stay = if from > 0.0 {
        (sched.one_minus_alpha(s_next) / from).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut out = z.clone();
    for pos in 0..z.len() {
        if !vocab.is_mask(z.get(pos)) {
            continue;
        }
        if open_unit(rng) >= stay {
            let token = sample_categorical(mu.row(pos), open_unit(rng));
            out.set(pos, token as TokenId);
        }
    }
    Ok(out)
}

/// Runs naive parallel sampling from the all-mask sequence at `t = 1`, stepping
/// a uniform γ-grid of spacing `h` until nothing is masked. `h = ∞` is a single
/// step straight to `t = 0`.
pub fn naive_generate<D, R>(
    len: usize,
    den: &D,
    sched: &NoiseSchedule,
    h: f64,
    rng: &mut R,
) -> Result<(Sequence, NfeLedger)>
where
    D: Denoiser + ?Sized,
    R: RngCore + ?Sized,
{
    if !(h > 0.0) {
        return Err(Error::domain(format!("gamma step must be positive, got {h}")));
    }
    let vocab = den.vocab();
    let mut ledger = NfeLedger::new();
    let mut z = Sequence::all_mask(len, &vocab);
    let gamma0 = gamma(1.0, sched)?;
    let mut s = 1.0;
    let mut k = 0u64;
    while z.masked_count(&vocab) > 0 {
        k += 1;
        // Grid points are exact multiples of h, never accumulated.
        let mut s_next = sched.time_from_gamma(gamma0 + k as f64 * h);
        if !(s_next < s) {
            s_next = 0.0;
        }
        z = naive_parallel_step(&z, s, s_next, den, sched, rng, &mut ledger)?;
        s = s_next;
    }
    Ok((z, ledger))
}

/// Next first-hitting event time: `α⁻¹(1 − u^{1/n}(1 − α_τ))`, strictly
/// below `tau`.
pub fn fhs_next_time(tau: f64, n: usize, u: f64, sched: &NoiseSchedule) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::domain(format!("uniform draw must lie in (0, 1), got {u}")));
    }
    if n == 0 {
        return Err(Error::NoMaskedPositions);
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::domain(format!("event time must lie in (0, 1], got {tau}")));
    }
    let remaining = u.powf(1.0 / n as f64) * sched.one_minus_alpha(tau);
    let next = sched.time_from_one_minus_alpha(remaining);
    Ok(if next < tau { next } else { tau.next_down() })
}

/// Outcome of one first-hitting event.
#[derive(Debug, Clone)]
pub(crate) struct FhsEvent {
    pub tau_next: f64,
    pub index: usize,
    pub token: TokenId,
    pub mu: ProbMatrix,
}

/// One FHS event from `(z, tau)`: draws the event time, evaluates the
/// denoiser there, picks a masked index uniformly and samples its token.
/// Draw order is (time, index, token).
pub(crate) fn fhs_event<D, R>(
    z: &Sequence,
    tau: f64,
    den: &D,
    sched: &NoiseSchedule,
    rng: &mut R,
    ledger: &mut NfeLedger,
) -> Result<FhsEvent>
where
    D: Denoiser + ?Sized,
    R: RngCore + ?Sized,
{
    let masked = z.masked_positions(&den.vocab());
    if masked.is_empty() {
        return Err(Error::NoMaskedPositions);
    }
    let tau_next = fhs_next_time(tau, masked.len(), open_unit(rng), sched)?;
    let mu = ledger.eval(den, z, tau_next)?;
    let index = masked[uniform_index(rng, masked.len())];
    let token = sample_categorical(mu.row(index), open_unit(rng)) as TokenId;
    Ok(FhsEvent {
        tau_next,
        index,
        token,
        mu,
    })
}

/// First-hitting sampling: exactly one denoiser call per unmasking event, so
/// the ledger always reads `len`.
pub fn fhs_generate<D, R>(
    len: usize,
    den: &D,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<(Sequence, NfeLedger)>
where
    D: Denoiser + ?Sized,
    R: RngCore + ?Sized,
{
    let vocab = den.vocab();
    let mut ledger = NfeLedger::new();
    let mut z = Sequence::all_mask(len, &vocab);
    let mut tau = 1.0;
    for _ in 0..len {
        let ev = fhs_event(&z, tau, den, sched, rng, &mut ledger)?;
        z.set(ev.index, ev.token);
        tau = ev.tau_next;
    }
    Ok((z, ledger))
}

/// Result of running naive parallel sampling until the first commitment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstChangeOutcome {
    pub tau_next: f64,
    pub committed_index: usize,
    pub committed_token: TokenId,
    pub evals: u64,
}

/// Steps the γ-grid of spacing `h` from `(z, tau)` until at least one position
/// unmasks. When several reveal in the same step one is committed uniformly
/// at random and the rest are discarded.
pub fn first_change_trial<D, R>(
    z: &Sequence,
    tau: f64,
    den: &D,
    sched: &NoiseSchedule,
    h: f64,
    rng: &mut R,
) -> Result<FirstChangeOutcome>
where
    D: Denoiser + ?Sized,
    R: RngCore + ?Sized,
{
    let vocab = den.vocab();
    if z.masked_count(&vocab) == 0 {
        return Err(Error::NoMaskedPositions);
    }
    if !(h > 0.0) {
        return Err(Error::domain(format!("gamma step must be positive, got {h}")));
    }
    let gamma0 = gamma(tau, sched)?;
    let mut ledger = NfeLedger::new();
    let mut s = tau;
    let mut k = 0u64;
    let mut revealed = Vec::new();
    loop {
        k += 1;
        let mut s_next = sched.time_from_gamma(gamma0 + k as f64 * h);
        if !(s_next < s) {
            s_next = 0.0;
        }
        let next = naive_parallel_step(z, s, s_next, den, sched, rng, &mut ledger)?;
        revealed.clear();
        revealed.extend((0..z.len()).filter(|&p| next.get(p) != z.get(p)));
        if !revealed.is_empty() {
            let committed_index = revealed[uniform_index(rng, revealed.len())];
            return Ok(FirstChangeOutcome {
                tau_next: s_next,
                committed_index,
                committed_token: next.get(committed_index),
                evals: ledger.evals(),
            });
        }
        s = s_next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdlm::{PlantedDenoiser, RandomTableDenoiser, Vocab};
    use crate::rng::Stream;

    fn planted(target: Vec<u32>, eps0: f64, v: usize) -> PlantedDenoiser {
        PlantedDenoiser::new(Sequence::from(target), eps0, Vocab::new(v).unwrap()).unwrap()
    }

    #[test]
    fn naive_step_rejects_forward_time() {
        let den = planted(vec![0], 0.0, 3);
        let z = Sequence::from(vec![2]);
        let mut ledger = NfeLedger::new();
        let r = naive_parallel_step(&z, 0.5, 0.5, &den, &NoiseSchedule::Linear, &mut Stream::new(0, 0), &mut ledger);
        assert!(r.is_err());
    }

    #[test]
    fn naive_step_full_reveal_at_time_zero() {
        let den = planted(vec![0, 1, 2], 0.3, 5);
        let v = den.vocab();
        let z = Sequence::all_mask(3, &v);
        let mut ledger = NfeLedger::new();
        let out = naive_parallel_step(&z, 0.7, 0.0, &den, &NoiseSchedule::Linear, &mut Stream::new(1, 0), &mut ledger).unwrap();
        assert_eq!(out.masked_count(&v), 0);
        assert_eq!(ledger.evals(), 1);
    }

    #[test]
    fn naive_step_zero_measure_keeps_input() {
        // Find a one-ulp step over which 1 - α is flat in double precision.
        let sched = NoiseSchedule::geometric(1e-3, 10.0).unwrap();
        let s = (1..1000)
            .map(|i| i as f64 / 1000.0)
            .find(|s: &f64| sched.one_minus_alpha(*s) == sched.one_minus_alpha(s.next_down()))
            .expect("a flat step exists");
        let den = planted(vec![0, 1], 0.3, 4);
        let z = Sequence::all_mask(2, &den.vocab());
        let mut ledger = NfeLedger::new();
        for seed in 0..100 {
            let out = naive_parallel_step(&z, s, s.next_down(), &den, &sched, &mut Stream::new(2, seed), &mut ledger).unwrap();
            assert_eq!(out, z);
        }
    }

    #[test]
    fn naive_step_no_reveal_probability() {
        // Ten masked positions, γ-step 0.01: P(no reveal) = exp(-0.1).
        let den = planted(vec![0; 10], 0.5, 4);
        let v = den.vocab();
        let sched = NoiseSchedule::Linear;
        let z = Sequence::all_mask(10, &v);
        let s = 0.6;
        let s_next = sched.time_from_gamma(gamma(s, &sched).unwrap() + 0.01);
        let trials = 100_000;
        let mut rng = Stream::new(3, 0);
        let mut ledger = NfeLedger::new();
        let mut quiet = 0usize;
        for _ in 0..trials {
            let out = naive_parallel_step(&z, s, s_next, &den, &sched, &mut rng, &mut ledger).unwrap();
            if out.masked_count(&v) == 10 {
                quiet += 1;
            }
        }
        let p = (-0.1f64).exp();
        let sd = (trials as f64 * p * (1.0 - p)).sqrt();
        assert!((quiet as f64 - trials as f64 * p).abs() <= 3.0 * sd, "{quiet}");
    }

    #[test]
    fn naive_generate_examples() {
        let den = planted(vec![2], 0.0, 4);
        let (z, _) = naive_generate(1, &den, &NoiseSchedule::Linear, 0.05, &mut Stream::new(4, 0)).unwrap();
        assert_eq!(z.tokens(), &[2]);

        let den = planted(vec![0, 1, 2, 0, 1, 2, 0, 1], 0.4, 5);
        let (z, ledger) = naive_generate(8, &den, &NoiseSchedule::Linear, f64::INFINITY, &mut Stream::new(5, 0)).unwrap();
        assert_eq!(ledger.evals(), 1);
        assert_eq!(z.masked_count(&den.vocab()), 0);

        // Every unmasking event needs at least one step.
        let (z, ledger) = naive_generate(8, &den, &NoiseSchedule::Linear, 0.05, &mut Stream::new(6, 0)).unwrap();
        assert_eq!(z.masked_count(&den.vocab()), 0);
        assert!(ledger.evals() >= 1);
        assert!(naive_generate(8, &den, &NoiseSchedule::Linear, 0.0, &mut Stream::new(6, 0)).is_err());
    }

    #[test]
    fn fhs_next_time_examples() {
        let s = NoiseSchedule::Linear;
        assert!((fhs_next_time(1.0, 4, 0.4096, &s).unwrap() - 0.8).abs() < 1e-12);
        assert!((fhs_next_time(1.0, 1, 0.25, &s).unwrap() - 0.25).abs() < 1e-15);
        let near = fhs_next_time(0.6, 3, 1.0 - 1e-12, &s).unwrap();
        assert!(near < 0.6 && near > 0.6 - 1e-9);
        assert!(fhs_next_time(0.6, 3, 0.0, &s).is_err());
        assert!(fhs_next_time(0.6, 3, 1.0, &s).is_err());
        assert!(fhs_next_time(0.6, 0, 0.5, &s).is_err());
    }

    #[test]
    fn fhs_next_time_strictly_decreases() {
        let scheds = [NoiseSchedule::Linear, NoiseSchedule::geometric(1e-4, 20.0).unwrap()];
        let mut rng = Stream::new(7, 0);
        for s in scheds {
            for _ in 0..10_000 {
                let tau = rng.open_unit();
                let n = 1 + rng.index(128);
                assert!(fhs_next_time(tau, n, rng.open_unit(), &s).unwrap() < tau);
            }
        }
    }

    #[test]
    fn fhs_counts_one_eval_per_event() {
        let v = Vocab::new(6).unwrap();
        let den = RandomTableDenoiser::new(3, 1.0, v).unwrap();
        for len in [1, 5, 17] {
            let (z, ledger) = fhs_generate(len, &den, &NoiseSchedule::Linear, &mut Stream::new(8, len as u64)).unwrap();
            assert_eq!(ledger.evals(), len as u64);
            assert_eq!(z.masked_count(&v), 0);
        }
    }

    #[test]
    fn fhs_planted_zero_eps_recovers_target() {
        let target = vec![3, 0, 2, 1, 1];
        let den = planted(target.clone(), 0.0, 5);
        let (z, _) = fhs_generate(5, &den, &NoiseSchedule::Linear, &mut Stream::new(9, 0)).unwrap();
        assert_eq!(z.tokens(), target.as_slice());
    }

    #[test]
    fn fhs_is_deterministic_given_rng() {
        let v = Vocab::new(4).unwrap();
        let den = RandomTableDenoiser::new(5, 0.5, v).unwrap();
        let a = fhs_generate(3, &den, &NoiseSchedule::Linear, &mut Stream::new(10, 0)).unwrap();
        let b = fhs_generate(3, &den, &NoiseSchedule::Linear, &mut Stream::new(10, 0)).unwrap();
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn fhs_events_commit_one_token_and_never_overwrite() {
        let v = Vocab::new(5).unwrap();
        let den = RandomTableDenoiser::new(6, 0.7, v).unwrap();
        let sched = NoiseSchedule::Linear;
        let mut rng = Stream::new(11, 0);
        let mut ledger = NfeLedger::new();
        let mut z = Sequence::all_mask(9, &v);
        let mut tau = 1.0;
        for n in (1..=9).rev() {
            let ev = fhs_event(&z, tau, &den, &sched, &mut rng, &mut ledger).unwrap();
            assert!(v.is_mask(z.get(ev.index)));
            assert!(ev.tau_next < tau);
            let before = z.clone();
            z.set(ev.index, ev.token);
            assert_eq!(z.masked_count(&v), n - 1);
            for p in 0..9 {
                if !v.is_mask(before.get(p)) {
                    assert_eq!(before.get(p), z.get(p));
                }
            }
            tau = ev.tau_next;
        }
        assert!(tau > 0.0);
    }

    #[test]
    fn first_change_examples() {
        let den = planted(vec![1], 0.2, 4);
        let z = Sequence::all_mask(1, &den.vocab());
        let out = first_change_trial(&z, 1.0, &den, &NoiseSchedule::Linear, 1e6, &mut Stream::new(12, 0)).unwrap();
        assert_eq!(out.evals, 1);
        assert_eq!(out.committed_index, 0);

        let full = Sequence::from(vec![1]);
        assert!(first_change_trial(&full, 1.0, &den, &NoiseSchedule::Linear, 0.1, &mut Stream::new(12, 0)).is_err());
    }

    #[test]
    fn first_change_mean_evals() {
        // n = 10, h = 0.01: E[evals] = 1/(1 - e^{-0.1}) ≈ 10.508.
        let den = planted(vec![0; 10], 0.3, 4);
        let z = Sequence::all_mask(10, &den.vocab());
        let trials = 50_000u64;
        let total: u64 = (0..trials)
            .map(|i| {
                first_change_trial(&z, 1.0, &den, &NoiseSchedule::Linear, 0.01, &mut Stream::new(13, i))
                    .unwrap()
                    .evals
            })
            .sum();
        let mean = total as f64 / trials as f64;
        let expect = 1.0 / (1.0 - (-0.1f64).exp());
        assert!((expect - 10.508).abs() < 1e-3);
        assert!((mean - expect).abs() / expect <= 0.02, "mean {mean}");
    }
}
