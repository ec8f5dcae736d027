//! Categorical sampling.

use rand::Rng;

use crate::error::{Error, Result};

/// Draw an action index from a probability vector. Returns the index and
/// ln(probs[index]). Indices with zero probability are never returned.
pub fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> Result<(usize, f64)> {
    if probs.is_empty() {
        return Err(Error::Argument("sample_categorical of empty vector".into()));
    }
    let total: f64 = probs.iter().sum();
    if !(total.is_finite() && (total - 1.0).abs() < 1e-6) || probs.iter().any(|&p| p < 0.0) {
        return Err(Error::Argument(format!(
            "sample_categorical needs a probability vector, sum was {total}"
        )));
    }
    let u: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = None;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = Some(i);
            acc += p;
            if u < acc {
                return Ok((i, p.ln()));
            }
        }
    }
    // Rounding pushed u past the accumulated total; take the last valid index.
    let i = last_positive.ok_or_else(|| Error::Argument("all probabilities are zero".into()))?;
    Ok((i, probs[i].ln()))
}

/// Greedy action: index of the largest probability (lowest index on ties).
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn degenerate_distribution_always_returns_support() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let (i, lp) = sample_categorical(&[1.0, 0.0], &mut rng).unwrap();
            assert_eq!(i, 0);
            assert_eq!(lp, 0.0);
        }
    }

    #[test]
    fn zero_probability_index_never_drawn() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for _ in 0..5000 {
            let (i, _) = sample_categorical(&[0.4, 0.0, 0.6], &mut rng).unwrap();
            assert_ne!(i, 1);
        }
    }

    #[test]
    fn frequencies_match_probs_within_three_standard_errors() {
        // Binomial standard error for p = 0.5 over 1e5 draws.
        let n = 100_000;
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut count0 = 0usize;
        for _ in 0..n {
            let (i, lp) = sample_categorical(&[0.5, 0.5], &mut rng).unwrap();
            assert!((lp - 0.5f64.ln()).abs() < 1e-15);
            if i == 0 {
                count0 += 1;
            }
        }
        let freq = count0 as f64 / n as f64;
        let se = (0.5 * 0.5 / n as f64).sqrt();
        assert!(
            (freq - 0.5).abs() <= 3.0 * se,
            "frequency {freq} outside 3 standard errors"
        );
    }

    #[test]
    fn fixed_seed_reproduces_draw_sequence() {
        let probs = [0.2, 0.3, 0.5];
        let draws = |seed: u64| -> Vec<usize> {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            (0..64)
                .map(|_| sample_categorical(&probs, &mut rng).unwrap().0)
                .collect()
        };
        assert_eq!(draws(9), draws(9));
    }

    #[test]
    fn log_prob_is_ln_of_selected_prob() {
        let probs = [0.25, 0.75];
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for _ in 0..100 {
            let (i, lp) = sample_categorical(&probs, &mut rng).unwrap();
            assert_eq!(lp, probs[i].ln());
        }
    }

    #[test]
    fn rejects_non_distribution() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        assert!(sample_categorical(&[0.5, 0.2], &mut rng).is_err());
        assert!(sample_categorical(&[], &mut rng).is_err());
    }
}
