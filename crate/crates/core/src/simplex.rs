//! Small helpers for probability vectors over finite action sets.

use rand::Rng;

use crate::error::{Error, Result};

/// Tolerance used when checking that a vector sums to one.
pub const SUM_TOL: f64 = 1e-12;

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Softmax with the max logit subtracted first, so logits of magnitude 1e6 are fine.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

/// `log Σ exp(z)`, computed stably.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// Uniform distribution over the maximizers of `values` (exact ties).
pub fn argmax_uniform(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let winners = values.iter().filter(|&&v| v == max).count();
    values
        .iter()
        .map(|&v| if v == max { 1.0 / winners as f64 } else { 0.0 })
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn is_distribution(p: &[f64], tol: f64) -> bool {
    !p.is_empty()
        && p.iter().all(|&x| x.is_finite() && x >= 0.0)
        && (p.iter().sum::<f64>() - 1.0).abs() <= tol
}

pub fn check_distribution(what: &str, p: &[f64], tol: f64) -> Result<()> {
    if is_distribution(p, tol) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} is not a probability vector: {p:?}")))
    }
}

/// Draws an index from `p` using exactly one uniform variate.
pub fn sample_index<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // rounding left `acc` slightly under one: fall back to the last supported action
    p.iter().rposition(|&w| w > 0.0).unwrap_or(p.len() - 1)
}

/// Convex combination `Σ w_k · p_k`.
pub fn mixture(weights: &[f64], policies: &[Vec<f64>]) -> Vec<f64> {
    let n = policies.first().map_or(0, Vec::len);
    let mut out = vec![0.0; n];
    for (w, p) in weights.iter().zip(policies) {
        for (o, x) in out.iter_mut().zip(p) {
            *o += w * x;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_survives_huge_logits() {
        let p = softmax(&[1e6, 1e6 - 1.0, -1e6]);
        assert!(is_distribution(&p, SUM_TOL));
        assert!((p[0] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn argmax_splits_ties() {
        assert_eq!(argmax_uniform(&[1.0, 3.0, 3.0]), vec![0.0, 0.5, 0.5]);
    }

    #[test]
    fn log_sum_exp_matches_naive() {
        let z = [0.1, -2.0, 1.5];
        let naive = z.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&z) - naive).abs() < 1e-14);
    }

    #[test]
    fn sampling_never_picks_zero_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = [0.0, 0.3, 0.0, 0.7, 0.0];
        for _ in 0..1000 {
            let i = sample_index(&p, &mut rng);
            assert!(i == 1 || i == 3);
        }
    }
}
