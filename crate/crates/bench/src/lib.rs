//! Shared fixtures for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use phapred::data::{generate_synthetic, ScenarioMix};
use phapred::select::SampleSet;
use phapred::{HybridSequence, HybridState, ModeId, SceneRecord};

/// Generated intent-changing scenes.
pub fn scenes(count: usize, seed: u64) -> Vec<SceneRecord> {
    generate_synthetic(count, seed, &ScenarioMix::intent_changing())
        .expect("generator accepts defaults")
}

/// `m` random sequences of length `horizon` with random likelihoods.
pub fn random_set(m: usize, horizon: usize, seed: u64) -> SampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sequences = (0..m)
        .map(|_| {
            let (vx, vy) = (rng.gen_range(0.5..2.0), rng.gen_range(-0.5..0.5));
            HybridSequence {
                steps: (1..=horizon)
                    .map(|t| HybridState {
                        mode: ModeId(rng.gen_range(0..5)),
                        position: [vx * t as f64, vy * t as f64],
                    })
                    .collect(),
                log_likelihood: Some(rng.gen_range(-120.0..-40.0)),
            }
        })
        .collect();
    SampleSet::new(sequences).expect("equal lengths and finite likelihoods")
}
