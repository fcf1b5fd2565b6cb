//! Random label corruption for robustness experiments.

use rand::{seq::index::sample, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{ModeId, SceneRecord};

/// Replaces exactly `round(fraction * total_steps)` future labels, chosen
/// uniformly without replacement, with a uniformly drawn different mode.
/// Continuous data is left untouched.
pub fn perturb_labels(
    records: &[SceneRecord],
    fraction: f64,
    seed: u64,
    vocab_size: usize,
) -> Result<Vec<SceneRecord>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidFraction(fraction));
    }
    let mut out = records.to_vec();
    let total: usize = out.iter().map(|r| r.future_modes.len()).sum();
    let count = (fraction * total as f64).round() as usize;
    if count == 0 {
        return Ok(out);
    }
    if vocab_size < 2 {
        return Err(Error::InvalidConfig(
            "label perturbation needs at least two modes".into(),
        ));
    }

    // Flat step index -> (record, step).
    let mut offsets = Vec::with_capacity(out.len());
    let mut acc = 0;
    for r in &out {
        offsets.push(acc);
        acc += r.future_modes.len();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, total, count).into_vec();
    picked.sort_unstable();
    for flat in picked {
        let rec = offsets.partition_point(|&o| o <= flat) - 1;
        let step = flat - offsets[rec];
        let old = out[rec].future_modes[step].index();
        let shift = 1 + rng.gen_range(0..vocab_size - 1);
        out[rec].future_modes[step] = ModeId((old + shift) % vocab_size);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_synthetic, ScenarioMix};

    fn changed(a: &[SceneRecord], b: &[SceneRecord]) -> usize {
        a.iter()
            .zip(b)
            .map(|(x, y)| {
                x.future_modes
                    .iter()
                    .zip(&y.future_modes)
                    .filter(|(p, q)| p != q)
                    .count()
            })
            .sum()
    }

    #[test]
    fn zero_fraction_is_identity() {
        let recs = generate_synthetic(10, 1, &ScenarioMix::default()).unwrap();
        assert_eq!(perturb_labels(&recs, 0.0, 3, 5).unwrap(), recs);
    }

    #[test]
    fn five_percent_of_3000_steps() {
        let recs = generate_synthetic(100, 1, &ScenarioMix::default()).unwrap();
        let out = perturb_labels(&recs, 0.05, 3, 5).unwrap();
        assert_eq!(changed(&recs, &out), 150);
        for (a, b) in recs.iter().zip(&out) {
            assert_eq!(a.future, b.future);
            assert_eq!(a.observed, b.observed);
            assert_eq!(a.centerlines, b.centerlines);
        }
    }

    #[test]
    fn full_fraction_changes_everything() {
        let recs = generate_synthetic(20, 2, &ScenarioMix::default()).unwrap();
        let out = perturb_labels(&recs, 1.0, 9, 5).unwrap();
        assert_eq!(changed(&recs, &out), 20 * 30);
        assert!(out
            .iter()
            .flat_map(|r| &r.future_modes)
            .all(|m| m.index() < 5));
    }

    #[test]
    fn deterministic_and_validated() {
        let recs = generate_synthetic(20, 2, &ScenarioMix::default()).unwrap();
        assert_eq!(
            perturb_labels(&recs, 0.3, 4, 5).unwrap(),
            perturb_labels(&recs, 0.3, 4, 5).unwrap()
        );
        assert!(matches!(
            perturb_labels(&recs, 1.5, 4, 5),
            Err(Error::InvalidFraction(_))
        ));
        assert!(perturb_labels(&recs, -0.1, 4, 5).is_err());
    }
}
