//! Comparison methods: Best-of-N over independent FHS runs, FK-style
//! reward-weighted particle steering, and the two ablation scorers that can
//! replace resubstitution inside the tree search.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::NfeLedger;
use crate::mdlm::{Denoiser, NoiseSchedule, Sequence, Vocab};
use crate::rewards::Reward;
use crate::rng::{open_unit, sample_categorical, Stream};
use crate::samplers::{fhs_event, fhs_generate};
use crate::search::{resubstitute_score, SearchNode};

/// Label of the resampling stream, kept apart from the per-slot streams.
const RESAMPLE_LABEL: u64 = 0x5245_5341_4D50_4C45; // "RESAMPLE"

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub seq: Sequence,
    pub tau: f64,
    /// Unnormalized log-weight; reset to zero on resampling.
    pub log_weight: f64,
    pub last_score: f64,
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub best: Sequence,
    pub best_score: f64,
    pub ledger: NfeLedger,
    /// Final reward of every run or particle, by slot.
    pub scores: Vec<f64>,
}

/// Stream for run or particle slot `i`.
pub fn slot_stream(seed: u64, i: usize) -> Stream {
    Stream::new(seed, i as u64)
}

fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// `N` independent FHS samples, keeping the highest reward (first slot wins
/// ties).
pub fn best_of_n<D, R>(
    n: usize,
    len: usize,
    den: &D,
    sched: &NoiseSchedule,
    reward: &R,
    seed: u64,
) -> Result<BaselineOutcome>
where
    D: Denoiser + ?Sized,
    R: Reward + ?Sized,
{
    if n == 0 {
        return Err(Error::domain("best-of-n needs at least one sample"));
    }
    let runs: Vec<Result<(Sequence, NfeLedger, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (seq, ledger) = fhs_generate(len, den, sched, &mut slot_stream(seed, i))?;
            let score = reward.score(&seq)?;
            Ok((seq, ledger, score))
        })
        .collect();
    let mut ledger = NfeLedger::new();
    let mut seqs = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for run in runs {
        let (seq, l, s) = run?;
        ledger.absorb(l);
        seqs.push(seq);
        scores.push(s);
    }
    let i = argmax_first(&scores);
    Ok(BaselineOutcome {
        best: seqs.swap_remove(i),
        best_score: scores[i],
        ledger,
        scores,
    })
}

/// Plain FHS sampling: Best-of-N with `N = 1`.
pub fn base_sample<D, R>(
    len: usize,
    den: &D,
    sched: &NoiseSchedule,
    reward: &R,
    seed: u64,
) -> Result<BaselineOutcome>
where
    D: Denoiser + ?Sized,
    R: Reward + ?Sized,
{
    best_of_n(1, len, den, sched, reward, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FkParams {
    pub particles: usize,
    pub lambda: f64,
    pub ess_frac: f64,
}

impl Default for FkParams {
    fn default() -> Self {
        FkParams {
            particles: 4,
            lambda: 1.0,
            ess_frac: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FkOutcome {
    pub outcome: BaselineOutcome,
    /// ESS after each event, before any resampling.
    pub ess_trace: Vec<f64>,
    pub resamples: usize,
}

/// `(Σw)² / Σw²` computed from log-weights.
pub fn effective_sample_size(log_weights: &[f64]) -> f64 {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (s1, s2) = log_weights.iter().fold((0.0, 0.0), |(a, b), &lw| {
        let w = (lw - max).exp();
        (a + w, b + w * w)
    });
    s1 * s1 / s2
}

fn normalized(log_weights: &[f64]) -> Vec<f64> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_weights.iter().map(|lw| (lw - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// FK-style steering: `P` particles advance one FHS event at a time in
/// lockstep. After each event a particle's weight is multiplied by
/// `exp((ŝ_new − ŝ_old)/λ)`, where `ŝ` is its resubstitution score (zero
/// before the first event). When the effective sample size drops below
/// `ess_frac · P` the population is resampled multinomially and the weights
/// reset.
pub fn fk_steer<D, R>(
    params: &FkParams,
    len: usize,
    den: &D,
    sched: &NoiseSchedule,
    reward: &R,
    seed: u64,
) -> Result<FkOutcome>
where
    D: Denoiser + ?Sized,
    R: Reward + ?Sized,
{
    let FkParams {
        particles: p,
        lambda,
        ess_frac,
    } = *params;
    if p == 0 {
        return Err(Error::domain("fk steering needs at least one particle"));
    }
    if !(lambda > 0.0) {
        return Err(Error::domain(format!("lambda must be positive, got {lambda}")));
    }
    if !(ess_frac > 0.0 && ess_frac <= 1.0) {
        return Err(Error::domain(format!("ess_frac must lie in (0, 1], got {ess_frac}")));
    }
    let vocab = den.vocab();
    let mut pop: Vec<Particle> = (0..p)
        .map(|_| Particle {
            seq: Sequence::all_mask(len, &vocab),
            tau: 1.0,
            log_weight: 0.0,
            last_score: 0.0,
        })
        .collect();
    let mut streams: Vec<Stream> = (0..p).map(|i| slot_stream(seed, i)).collect();
    let mut ledger = NfeLedger::new();
    let mut ess_trace = Vec::with_capacity(len);
    let mut resamples = 0;

    for step in 0..len {
        let evals: Vec<Result<NfeLedger>> = pop
            .par_iter_mut()
            .zip(streams.par_iter_mut())
            .map(|(part, stream)| {
                let mut local = NfeLedger::new();
                let ev = fhs_event(&part.seq, part.tau, den, sched, stream, &mut local)?;
                part.seq.set(ev.index, ev.token);
                part.tau = ev.tau_next;
                let score = resubstitute_score(&part.seq, &ev.mu, &vocab, reward)?;
                part.log_weight += (score - part.last_score) / lambda;
                part.last_score = score;
                Ok(local)
            })
            .collect();
        for l in evals {
            ledger.absorb(l?);
        }
        for (i, part) in pop.iter().enumerate() {
            if !part.log_weight.is_finite() {
                return Err(Error::NonFiniteWeights {
                    step,
                    particle: i,
                    log_weight: part.log_weight,
                });
            }
        }
        let lw: Vec<f64> = pop.iter().map(|q| q.log_weight).collect();
        let ess = effective_sample_size(&lw);
        ess_trace.push(ess);
        if ess < ess_frac * p as f64 {
            let w = normalized(&lw);
            let mut step_rng = Stream::from_key(&[seed, RESAMPLE_LABEL, step as u64]);
            let picks: Vec<usize> = (0..p)
                .map(|_| sample_categorical(&w, open_unit(&mut step_rng)))
                .collect();
            pop = picks
                .into_iter()
                .map(|j| Particle {
                    log_weight: 0.0,
                    ..pop[j].clone()
                })
                .collect();
            resamples += 1;
        }
    }

    let scores = pop
        .iter()
        .map(|q| reward.score(&q.seq))
        .collect::<Result<Vec<_>>>()?;
    let i = argmax_first(&scores);
    Ok(FkOutcome {
        outcome: BaselineOutcome {
            best: pop.swap_remove(i).seq,
            best_score: scores[i],
            ledger,
            scores,
        },
        ess_trace,
        resamples,
    })
}

/// Previous-step scoring: the reward of the state the child was expanded
/// from, masks included. No denoiser calls.
pub fn score_previous_step<R: Reward + ?Sized>(
    child: &SearchNode,
    vocab: &Vocab,
    reward: &R,
) -> Result<f64> {
    reward.score(&child.parent_seq(vocab))
}

/// True-posterior scoring: a fresh evaluation at `(child.seq, child.tau)`,
/// then argmax fill. Costs one call per child, even a fully unmasked one.
pub fn score_true_posterior<D, R>(
    child: &SearchNode,
    den: &D,
    reward: &R,
    ledger: &mut NfeLedger,
) -> Result<f64>
where
    D: Denoiser + ?Sized,
    R: Reward + ?Sized,
{
    let mu = ledger.eval(den, &child.seq, child.tau)?;
    resubstitute_score(&child.seq, &mu, &den.vocab(), reward)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdlm::{CountingDenoiser, PlantedDenoiser, RandomTableDenoiser};
    use crate::rewards::{LexiconReward, TargetMatchReward};
    use crate::search::{treasure_search, Lineage, Scorer, SearchConfig, WidthSchedule};

    fn lexicon(v: usize) -> LexiconReward {
        LexiconReward::new((0..v).map(|i| ((i * 7) % 5) as f64 - 2.0).collect()).unwrap()
    }

    #[test]
    fn bon_single_equals_fhs() {
        let v = Vocab::new(6).unwrap();
        let den = RandomTableDenoiser::new(1, 0.8, v).unwrap();
        let r = lexicon(6);
        let out = best_of_n(1, 7, &den, &NoiseSchedule::Linear, &r, 4).unwrap();
        let (seq, _) = fhs_generate(7, &den, &NoiseSchedule::Linear, &mut slot_stream(4, 0)).unwrap();
        assert_eq!(out.best, seq);
        assert_eq!(base_sample(7, &den, &NoiseSchedule::Linear, &r, 4).unwrap().best, seq);
    }

    #[test]
    fn bon_ledger_is_n_times_len() {
        let v = Vocab::new(5).unwrap();
        let den = CountingDenoiser::new(RandomTableDenoiser::new(2, 1.0, v).unwrap());
        let r = lexicon(5);
        for n in [1, 3, 8] {
            den.reset();
            let out = best_of_n(n, 6, &den, &NoiseSchedule::Linear, &r, 9).unwrap();
            assert_eq!(out.ledger.evals(), (n * 6) as u64);
            assert_eq!(den.calls(), (n * 6) as u64);
        }
        assert!(best_of_n(0, 6, &den, &NoiseSchedule::Linear, &r, 9).is_err());
    }

    #[test]
    fn bon_mean_is_monotone_in_n() {
        let v = Vocab::new(16).unwrap();
        let target = Sequence::from((0..16).map(|i| (i * 3 % 15) as u32).collect::<Vec<_>>());
        let den = PlantedDenoiser::new(target.clone(), 0.6, v).unwrap();
        let r = TargetMatchReward::new(target);
        let mut prev = f64::NEG_INFINITY;
        for n in [1, 2, 4, 8] {
            let mean = (0..50u64)
                .map(|s| best_of_n(n, 16, &den, &NoiseSchedule::Linear, &r, s).unwrap().best_score)
                .sum::<f64>()
                / 50.0;
            assert!(mean >= prev, "N={n}: {mean} < {prev}");
            prev = mean;
        }
    }

    #[test]
    fn fk_single_particle_is_fhs() {
        let v = Vocab::new(6).unwrap();
        let den = RandomTableDenoiser::new(3, 0.5, v).unwrap();
        let r = lexicon(6);
        let params = FkParams {
            particles: 1,
            ..FkParams::default()
        };
        let out = fk_steer(&params, 8, &den, &NoiseSchedule::Linear, &r, 11).unwrap();
        let (seq, _) = fhs_generate(8, &den, &NoiseSchedule::Linear, &mut slot_stream(11, 0)).unwrap();
        assert_eq!(out.outcome.best, seq);
        assert_eq!(out.resamples, 0);
    }

    #[test]
    fn fk_without_resampling_is_bon() {
        let v = Vocab::new(7).unwrap();
        let den = RandomTableDenoiser::new(5, 0.7, v).unwrap();
        let r = lexicon(7);
        for lambda in [1.0, f64::INFINITY] {
            let params = FkParams {
                particles: 6,
                lambda,
                ess_frac: if lambda.is_finite() { 1e-9 } else { 1.0 },
            };
            let fk = fk_steer(&params, 9, &den, &NoiseSchedule::Linear, &r, 2).unwrap();
            let bon = best_of_n(6, 9, &den, &NoiseSchedule::Linear, &r, 2).unwrap();
            assert_eq!(fk.resamples, 0);
            assert_eq!(fk.outcome.best, bon.best);
            assert_eq!(fk.outcome.scores, bon.scores);
            assert_eq!(fk.outcome.ledger.evals(), 54);
        }
    }

    #[test]
    fn fk_ess_bounds_and_ledger() {
        let v = Vocab::new(8).unwrap();
        let den = CountingDenoiser::new(RandomTableDenoiser::new(6, 0.3, v).unwrap());
        let r = LexiconReward::new(vec![3.0, -3.0, 1.0, 0.0, 2.0, -1.0, 0.5, 0.0]).unwrap();
        let params = FkParams {
            particles: 8,
            lambda: 0.2,
            ess_frac: 0.5,
        };
        let out = fk_steer(&params, 10, &den, &NoiseSchedule::Linear, &r, 1).unwrap();
        assert!(out.resamples > 0);
        assert_eq!(den.calls(), 80);
        assert_eq!(out.outcome.ledger.evals(), 80);
        for &e in &out.ess_trace {
            assert!((1.0 - 1e-12..=8.0 + 1e-12).contains(&e), "{e}");
        }
        let again = fk_steer(&params, 10, &den, &NoiseSchedule::Linear, &r, 1).unwrap();
        assert_eq!(again.outcome.best, out.outcome.best);
    }

    #[test]
    fn fk_rejects_bad_params() {
        let v = Vocab::new(3).unwrap();
        let den = RandomTableDenoiser::new(6, 0.3, v).unwrap();
        let r = lexicon(3);
        for params in [
            FkParams { particles: 0, ..FkParams::default() },
            FkParams { lambda: 0.0, ..FkParams::default() },
            FkParams { ess_frac: 0.0, ..FkParams::default() },
            FkParams { ess_frac: 1.5, ..FkParams::default() },
        ] {
            assert!(fk_steer(&params, 3, &den, &NoiseSchedule::Linear, &r, 0).is_err());
        }
    }

    #[test]
    fn ess_examples() {
        assert!((effective_sample_size(&[0.0; 5]) - 5.0).abs() < 1e-12);
        assert!((effective_sample_size(&[0.0, -1e6, -1e6]) - 1.0).abs() < 1e-12);
        assert!((effective_sample_size(&[1e6, 1e6]) - 2.0).abs() < 1e-12);
    }

    fn child(seq: Vec<u32>, committed: Option<(usize, u32)>, tau: f64) -> SearchNode {
        SearchNode {
            seq: Sequence::from(seq),
            tau,
            score: 0.0,
            parent_mu: None,
            committed,
            lineage: Lineage {
                level: 0,
                parent_rank: 0,
                branch_rank: 0,
            },
        }
    }

    #[test]
    fn previous_step_examples() {
        let v = Vocab::new(3).unwrap();
        let r = TargetMatchReward::new(Sequence::from(vec![0, 1]));
        assert_eq!(score_previous_step(&child(vec![0, 2], Some((0, 0)), 0.5), &v, &r).unwrap(), 0.0);
        assert_eq!(score_previous_step(&child(vec![0, 1], None, 0.5), &v, &r).unwrap(), 2.0);
        assert_eq!(score_previous_step(&child(vec![0, 1], Some((1, 1)), 0.5), &v, &r).unwrap(), 1.0);
    }

    #[test]
    fn true_posterior_on_full_child_wastes_one_eval() {
        let v = Vocab::new(4).unwrap();
        let den = RandomTableDenoiser::new(1, 1.0, v).unwrap();
        let r = TargetMatchReward::new(Sequence::from(vec![0, 1, 2]));
        let mut ledger = NfeLedger::new();
        let c = child(vec![0, 1, 0], Some((2, 0)), 0.1);
        assert_eq!(score_true_posterior(&c, &den, &r, &mut ledger).unwrap(), 2.0);
        assert_eq!(ledger.evals(), 1);
    }

    #[test]
    fn ablation_scorers_accounting() {
        let v = Vocab::new(6).unwrap();
        let den = CountingDenoiser::new(RandomTableDenoiser::new(9, 0.5, v).unwrap());
        let r = lexicon(6);
        let base = SearchConfig::new(WidthSchedule::constant(5, 2));
        let plain = treasure_search(8, &den, &NoiseSchedule::Linear, &r, &base, 4).unwrap();
        let prev = treasure_search(8, &den, &NoiseSchedule::Linear, &r, &base.clone().with_scorer(Scorer::PreviousStep), 4).unwrap();
        assert_eq!(plain.ledger.evals(), prev.ledger.evals());
        den.reset();
        let tp = treasure_search(8, &den, &NoiseSchedule::Linear, &r, &base.with_scorer(Scorer::TruePosterior), 4).unwrap();
        let parents: u64 = tp.trajectory.iter().map(|s| s.parents as u64).sum();
        let children: u64 = tp.trajectory.iter().map(|s| s.pool as u64).sum();
        assert_eq!(tp.ledger.evals(), parents + children);
        assert_eq!(den.calls(), tp.ledger.evals());
    }
}
