//! Gumbel-max sampling and its softmax relaxation.

use rand::Rng;
use rand_distr::{Distribution, Gumbel};

use crate::nn::softmax;
use crate::types::ModeId;

/// Standard Gumbel(0, 1) draws.
pub fn gumbel_noise(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let g = Gumbel::new(0.0, 1.0).expect("unit Gumbel");
    (0..n).map(|_| g.sample(rng)).collect()
}

pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

/// `softmax((logits + noise) / temperature)`.
pub fn relaxed(logits: &[f64], noise: &[f64], temperature: f64) -> Vec<f64> {
    let z: Vec<f64> = logits
        .iter()
        .zip(noise)
        .map(|(l, g)| (l + g) / temperature)
        .collect();
    softmax(&z)
}

/// Draws a mode from `softmax(logits)`. The hard sample is the argmax of the
/// relaxed sample, which does not depend on the temperature.
pub fn sample_mode(logits: &[f64], rng: &mut impl Rng) -> ModeId {
    let noise = gumbel_noise(logits.len(), rng);
    let perturbed: Vec<f64> = logits.iter().zip(&noise).map(|(l, g)| l + g).collect();
    ModeId(argmax(&perturbed))
}

pub fn one_hot(index: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[index] = 1.0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn near_degenerate_logits_pick_the_dominant_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = [100.0, 0.0, 0.0, 0.0, 0.0];
        let hits = (0..10_000)
            .filter(|_| sample_mode(&logits, &mut rng) == ModeId(0))
            .count();
        assert!(hits as f64 / 1e4 >= 0.999);
    }

    #[test]
    fn single_mode_always_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_mode(&[0.3], &mut rng), ModeId(0));
        }
        assert_eq!(softmax(&[0.3]), vec![1.0]);
    }

    #[test]
    fn frequencies_match_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits = [0.5, -1.0, 2.0, 0.0];
        let p = softmax(&logits);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[sample_mode(&logits, &mut rng).index()] += 1;
        }
        let tv: f64 = counts
            .iter()
            .zip(&p)
            .map(|(c, q)| (*c as f64 / n as f64 - q).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.01, "{tv}");
    }

    #[test]
    fn relaxed_sample_argmax_matches_hard_sample() {
        let logits = [0.1, 0.7, -0.2];
        let noise = [0.3, -0.5, 1.2];
        let soft = relaxed(&logits, &noise, 0.5);
        assert!((soft.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(argmax(&soft), 2);
    }
}
