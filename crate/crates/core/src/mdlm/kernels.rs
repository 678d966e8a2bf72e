use rand::Rng;

use super::{NoiseSchedule, Sequence, TokenId, Vocab};
use crate::error::{Error, Result};

/// `γ(t) = −log(1 − α_t)`; decreasing in `t`, zero at `t = 1` for the linear
/// schedule and unbounded as `t → 0`.
pub fn gamma(t: f64, sched: &NoiseSchedule) -> Result<f64> {
    let c = sched.one_minus_alpha(t);
    if !(c > 0.0) {
        return Err(Error::domain(format!("gamma undefined at t={t}: 1 - alpha_t = {c}")));
    }
    Ok(-c.ln())
}

/// Corrupts `x` to time `t`: each position is kept with probability `α_t`
/// and replaced by the mask otherwise.
pub fn forward_corrupt<R: Rng + ?Sized>(
    x: &Sequence,
    t: f64,
    sched: &NoiseSchedule,
    vocab: &Vocab,
    rng: &mut R,
) -> Sequence {
    let keep = sched.alpha(t.clamp(0.0, 1.0));
    let mut out = x.clone();
    for pos in 0..out.len() {
        // α = 1 and α = 0 are handled exactly, without consuming precision.
        let masked = if keep >= 1.0 {
            false
        } else if keep <= 0.0 {
            true
        } else {
            rng.random::<f64>() >= keep
        };
        if masked {
            out.set(pos, vocab.mask_id());
        }
    }
    out
}

/// Per-token reverse posterior `q(z_s | z_t, x)` for `s < t`: either a point
/// mass on an already-revealed token, or a two-point law over staying masked
/// and revealing `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RevealPosterior {
    pub token: TokenId,
    pub p_token: f64,
    pub p_mask: f64,
}

pub fn reverse_posterior_token(
    z_t: TokenId,
    x: TokenId,
    alpha_s: f64,
    alpha_t: f64,
    vocab: &Vocab,
) -> Result<RevealPosterior> {
    if !vocab.is_mask(z_t) {
        return Ok(RevealPosterior {
            token: z_t,
            p_token: 1.0,
            p_mask: 0.0,
        });
    }
    if !(alpha_t < 1.0) {
        return Err(Error::domain(format!("alpha_t = {alpha_t} leaves no mass to reveal")));
    }
    if alpha_s < alpha_t {
        return Err(Error::domain(format!(
            "reverse step needs alpha_s >= alpha_t, got {alpha_s} < {alpha_t}"
        )));
    }
    let denom = 1.0 - alpha_t;
    Ok(RevealPosterior {
        token: x,
        p_token: (alpha_s - alpha_t) / denom,
        p_mask: (1.0 - alpha_s) / denom,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn gamma_linear_examples() {
        let s = NoiseSchedule::Linear;
        assert!((gamma(0.5, &s).unwrap() - 0.5f64.ln().abs()).abs() < 1e-15);
        assert_eq!(gamma(1.0, &s).unwrap(), 0.0);
        assert!((gamma((-1.0f64).exp(), &s).unwrap() - 1.0).abs() < 1e-15);
        assert!(gamma(0.0, &s).is_err());
    }

    #[test]
    fn gamma_decreases_in_t() {
        let s = NoiseSchedule::geometric(1e-3, 10.0).unwrap();
        let mut prev = f64::INFINITY;
        for i in 1..=100 {
            let g = gamma(i as f64 / 100.0, &s).unwrap();
            assert!(g < prev);
            prev = g;
        }
    }

    #[test]
    fn forward_corrupt_extremes() {
        let v = Vocab::new(5).unwrap();
        let x = Sequence::from(vec![0, 1, 2, 3, 0]);
        let mut rng = Stream::new(1, 0);
        assert_eq!(forward_corrupt(&x, 0.0, &NoiseSchedule::Linear, &v, &mut rng), x);
        let all = forward_corrupt(&x, 1.0, &NoiseSchedule::Linear, &v, &mut rng);
        assert_eq!(all, Sequence::all_mask(5, &v));
    }

    #[test]
    fn forward_corrupt_fraction() {
        // Binomial(1000, 0.5): sd ≈ 15.8, so ±50 is more than 3 sd.
        let v = Vocab::new(5).unwrap();
        let x = Sequence::from(vec![1; 1000]);
        let mut rng = Stream::new(2, 0);
        let z = forward_corrupt(&x, 0.5, &NoiseSchedule::Linear, &v, &mut rng);
        let frac = z.masked_count(&v) as f64 / 1000.0;
        assert!((frac - 0.5).abs() <= 0.05, "{frac}");
    }

    #[test]
    fn posterior_examples() {
        let v = Vocab::new(5).unwrap();
        let p = reverse_posterior_token(4, 1, 0.75, 0.25, &v).unwrap();
        assert!((p.p_mask - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.p_token - 2.0 / 3.0).abs() < 1e-15);
        let copy = reverse_posterior_token(3, 1, 0.75, 0.25, &v).unwrap();
        assert_eq!((copy.token, copy.p_token, copy.p_mask), (3, 1.0, 0.0));
        let still = reverse_posterior_token(4, 1, 0.4, 0.4, &v).unwrap();
        assert_eq!((still.p_mask, still.p_token), (1.0, 0.0));
        assert!(reverse_posterior_token(4, 1, 1.0, 1.0, &v).is_err());
    }

    #[test]
    fn posterior_sums_to_one() {
        let v = Vocab::new(3).unwrap();
        let mut rng = Stream::new(3, 0);
        for _ in 0..10_000 {
            let a = rng.open_unit();
            let b = rng.open_unit();
            let (alpha_s, alpha_t) = if a > b { (a, b) } else { (b, a) };
            let p = reverse_posterior_token(2, 0, alpha_s, alpha_t, &v).unwrap();
            assert!(p.p_mask >= 0.0 && p.p_token >= 0.0);
            assert!((p.p_mask + p.p_token - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn masked_token_survives_gamma_step_with_prob_exp_minus_h() {
        // Re-masking probability over a γ-step h equals (1-α_{s'})/(1-α_s) = e^{-h}.
        let s = NoiseSchedule::Linear;
        let v = Vocab::new(3).unwrap();
        let h = 0.3;
        let g0 = gamma(0.8, &s).unwrap();
        let t_prev = s.time_from_gamma(g0);
        let t_next = s.time_from_gamma(g0 + h);
        let p = reverse_posterior_token(2, 0, s.alpha(t_next), s.alpha(t_prev), &v).unwrap();
        let trials = 100_000;
        let mut rng = Stream::new(4, 0);
        let stayed = (0..trials).filter(|_| rng.open_unit() < p.p_mask).count() as f64;
        let expect = (-h).exp();
        let sd = (trials as f64 * expect * (1.0 - expect)).sqrt();
        assert!((stayed - trials as f64 * expect).abs() <= 3.0 * sd);
        assert!((p.p_mask - expect).abs() < 1e-12);
    }
}
