//! Sample generation and selection of the final predictions.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PhaModel;
use crate::nn::log_sum_exp;
use crate::seed::derive_indexed;
use crate::types::{HybridSequence, Point, SceneRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub sequences: Vec<HybridSequence>,
    /// Order in which the sequences were generated; sequence
    /// `generation_order[k]` was conditioned on the ones before it.
    pub generation_order: Vec<usize>,
}

impl SampleSet {
    /// Wraps sequences generated in index order.
    pub fn new(sequences: Vec<HybridSequence>) -> Result<Self> {
        if let Some(first) = sequences.first() {
            for s in &sequences {
                if s.len() != first.len() {
                    return Err(Error::ShapeMismatch("sequences differ in length".into()));
                }
                if !s.ll().is_finite() {
                    return Err(Error::NonFinite {
                        field: "log_likelihood".into(),
                        index: 0,
                    });
                }
            }
        }
        let generation_order = (0..sequences.len()).collect();
        Ok(Self {
            sequences,
            generation_order,
        })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    fn endpoints(&self) -> Vec<Point> {
        self.sequences
            .iter()
            .map(HybridSequence::endpoint)
            .collect()
    }

    fn lls(&self) -> Vec<f64> {
        self.sequences.iter().map(HybridSequence::ll).collect()
    }

    fn check(&self, n: usize) -> Result<()> {
        if n > self.len() {
            return Err(Error::SelectionTooLarge {
                requested: n,
                available: self.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Positions of the selected sequences in the sample set, in pick order.
    pub indices: Vec<usize>,
    pub selected: Vec<HybridSequence>,
    /// Likelihoods renormalized over the selection.
    pub probabilities: Vec<f64>,
}

impl SelectionResult {
    fn from_indices(set: &SampleSet, indices: Vec<usize>) -> Self {
        let selected: Vec<HybridSequence> =
            indices.iter().map(|&i| set.sequences[i].clone()).collect();
        let probabilities =
            normalized_probabilities(&selected.iter().map(HybridSequence::ll).collect::<Vec<_>>());
        Self {
            indices,
            selected,
            probabilities,
        }
    }
}

/// `exp(ll_i) / sum_j exp(ll_j)`, computed stably.
pub fn normalized_probabilities(lls: &[f64]) -> Vec<f64> {
    if lls.is_empty() {
        return Vec::new();
    }
    let z = log_sum_exp(lls);
    lls.iter().map(|l| (l - z).exp()).collect()
}

/// Draws `count` sequences from the model for one scene.
pub fn generate_samples(
    model: &PhaModel,
    record: &SceneRecord,
    count: usize,
    rng: &mut impl Rng,
) -> Result<SampleSet> {
    SampleSet::new(model.sample_sequences(record, count, rng)?)
}

/// Settings for turning one scene into final predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictOptions {
    pub num_samples: usize,
    pub num_selected: usize,
    pub method: SelectionMethod,
    pub nms_threshold: f64,
    pub seed: u64,
}

/// Generates and selects predictions for scene number `index`. The random
/// stream depends only on the seed and the index.
pub fn predict_scene(
    model: &PhaModel,
    record: &SceneRecord,
    index: usize,
    opts: &PredictOptions,
) -> Result<SelectionResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(opts.seed, "scene", index as u64));
    let set = generate_samples(model, record, opts.num_samples, &mut rng)?;
    select(
        &set,
        opts.num_selected,
        opts.method,
        opts.nms_threshold,
        &mut rng,
    )
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Indices sorted by descending likelihood, ties to the lower index.
fn by_likelihood(lls: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..lls.len()).collect();
    idx.sort_by(|&a, &b| lls[b].total_cmp(&lls[a]).then(a.cmp(&b)));
    idx
}

/// Farthest point sampling on endpoints, seeded with the most likely sample.
pub fn select_fps(set: &SampleSet, n: usize) -> Result<SelectionResult> {
    set.check(n)?;
    let ends = set.endpoints();
    let lls = set.lls();
    let mut picked = Vec::with_capacity(n);
    if n > 0 {
        picked.push(by_likelihood(&lls)[0]);
    }
    let mut nearest: Vec<f64> = ends
        .iter()
        .map(|&e| picked.first().map_or(f64::INFINITY, |&p| dist(e, ends[p])))
        .collect();
    while picked.len() < n {
        let mut best: Option<usize> = None;
        for i in 0..ends.len() {
            if picked.contains(&i) {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) => {
                    let better =
                        nearest[i] > nearest[b] || (nearest[i] == nearest[b] && lls[i] > lls[b]);
                    Some(if better { i } else { b })
                }
            };
        }
        let b = best.expect("n <= M leaves a candidate");
        picked.push(b);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(dist(ends[i], ends[b]));
        }
    }
    Ok(SelectionResult::from_indices(set, picked))
}

/// Greedy non-maximum suppression in likelihood order; a sample is kept if
/// its endpoint is at least `threshold` from every kept endpoint. Missing
/// picks are filled uniformly at random from the suppressed samples.
pub fn select_nms(
    set: &SampleSet,
    n: usize,
    threshold: f64,
    rng: &mut impl Rng,
) -> Result<SelectionResult> {
    set.check(n)?;
    if !(threshold > 0.0) {
        return Err(Error::InvalidConfig(
            "NMS threshold must be positive".into(),
        ));
    }
    let ends = set.endpoints();
    let mut picked: Vec<usize> = Vec::with_capacity(n);
    let mut rejected = Vec::new();
    for i in by_likelihood(&set.lls()) {
        if picked.len() == n {
            break;
        }
        if picked.iter().all(|&p| dist(ends[i], ends[p]) >= threshold) {
            picked.push(i);
        } else {
            rejected.push(i);
        }
    }
    while picked.len() < n {
        let j = rng.gen_range(0..rejected.len());
        picked.push(rejected.swap_remove(j));
    }
    Ok(SelectionResult::from_indices(set, picked))
}

pub fn select_most_likely(set: &SampleSet, n: usize) -> Result<SelectionResult> {
    set.check(n)?;
    let idx = by_likelihood(&set.lls()).into_iter().take(n).collect();
    Ok(SelectionResult::from_indices(set, idx))
}

/// `n` draws without replacement, each proportional to the likelihood of
/// the remaining samples.
pub fn select_random(set: &SampleSet, n: usize, rng: &mut impl Rng) -> Result<SelectionResult> {
    set.check(n)?;
    let lls = set.lls();
    let mut remaining: Vec<usize> = (0..set.len()).collect();
    let mut picked = Vec::with_capacity(n);
    while picked.len() < n {
        let max = remaining
            .iter()
            .map(|&i| lls[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = remaining.iter().map(|&i| (lls[i] - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        let mut j = remaining.len() - 1;
        for (k, w) in weights.iter().enumerate() {
            if u < *w {
                j = k;
                break;
            }
            u -= w;
        }
        picked.push(remaining.remove(j));
    }
    Ok(SelectionResult::from_indices(set, picked))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    Fps,
    Nms,
    MostLikely,
    Random,
}

impl SelectionMethod {
    pub const ALL: [SelectionMethod; 4] = [Self::Fps, Self::Nms, Self::MostLikely, Self::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fps => "fps",
            Self::Nms => "nms",
            Self::MostLikely => "most_likely",
            Self::Random => "random",
        }
    }
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown selection method `{s}`")))
    }
}

/// Dispatches to the selector; `nms_threshold` is used only by NMS.
pub fn select(
    set: &SampleSet,
    n: usize,
    method: SelectionMethod,
    nms_threshold: f64,
    rng: &mut impl Rng,
) -> Result<SelectionResult> {
    match method {
        SelectionMethod::Fps => select_fps(set, n),
        SelectionMethod::Nms => select_nms(set, n, nms_threshold, rng),
        SelectionMethod::MostLikely => select_most_likely(set, n),
        SelectionMethod::Random => select_random(set, n, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{HybridState, ModeId};

    fn seq(end: Point, ll: f64) -> HybridSequence {
        HybridSequence {
            steps: vec![
                HybridState {
                    mode: ModeId(1),
                    position: [0.0, 0.0],
                },
                HybridState {
                    mode: ModeId(1),
                    position: end,
                },
            ],
            log_likelihood: Some(ll),
        }
    }

    fn set(items: &[(Point, f64)]) -> SampleSet {
        SampleSet::new(items.iter().map(|&(e, l)| seq(e, l)).collect()).unwrap()
    }

    #[test]
    fn fps_example() {
        let s = set(&[([0.0, 0.0], -1.0), ([10.0, 0.0], -2.0), ([1.0, 0.0], -3.0)]);
        let r = select_fps(&s, 2).unwrap();
        assert_eq!(r.indices, vec![0, 1]);
        let z = (-1f64).exp() + (-2f64).exp();
        assert!((r.probabilities[0] - (-1f64).exp() / z).abs() < 1e-12);
    }

    #[test]
    fn fps_degenerate_geometry_uses_tie_breaks() {
        let s = set(&[
            ([1.0, 1.0], -3.0),
            ([1.0, 1.0], -1.0),
            ([1.0, 1.0], -2.0),
            ([1.0, 1.0], -2.0),
        ]);
        let r = select_fps(&s, 3).unwrap();
        assert_eq!(r.indices, vec![1, 2, 3]);
    }

    #[test]
    fn full_selection_returns_every_sample() {
        let s = set(&[([0.0, 0.0], -1.0), ([3.0, 0.0], -2.0), ([1.0, 5.0], -3.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for m in SelectionMethod::ALL {
            let mut idx = select(&s, 3, m, 2.0, &mut rng).unwrap().indices;
            idx.sort();
            assert_eq!(idx, vec![0, 1, 2], "{m}");
        }
    }

    #[test]
    fn too_many_is_an_error() {
        let s = set(&[([0.0, 0.0], -1.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for m in SelectionMethod::ALL {
            assert!(matches!(
                select(&s, 2, m, 1.0, &mut rng),
                Err(Error::SelectionTooLarge { .. })
            ));
        }
    }

    #[test]
    fn nms_fills_randomly_when_everything_is_close() {
        let s = set(&[([0.0, 0.0], -1.0), ([1.0, 0.0], -2.0), ([0.5, 0.8], -3.0)]);
        let r = select_nms(&s, 2, 2.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(r.indices[0], 0);
        assert!(r.indices[1] == 1 || r.indices[1] == 2);
    }

    #[test]
    fn nms_with_tiny_threshold_is_most_likely() {
        let s = set(&[
            ([0.0, 0.0], -3.0),
            ([1.0, 0.0], -1.0),
            ([2.0, 0.0], -2.0),
            ([3.0, 0.0], -4.0),
        ]);
        let a = select_nms(&s, 3, 1e-9, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let b = select_most_likely(&s, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.indices, vec![1, 2, 0]);
    }

    #[test]
    fn random_prefers_heavy_samples() {
        let w: f64 = 0.999;
        let rest = (1.0 - w) / 2.0;
        let s = set(&[
            ([0.0, 0.0], rest.ln()),
            ([1.0, 0.0], w.ln()),
            ([2.0, 0.0], rest.ln()),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hits = (0..1000)
            .filter(|_| select_random(&s, 1, &mut rng).unwrap().indices[0] == 1)
            .count();
        assert!(hits >= 990, "{hits}");
    }

    #[test]
    fn probabilities_are_normalized() {
        let p = normalized_probabilities(&[-1000.0, -1001.0, -999.5]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn method_names_round_trip() {
        for m in SelectionMethod::ALL {
            assert_eq!(m.as_str().parse::<SelectionMethod>().unwrap(), m);
        }
        assert!("best".parse::<SelectionMethod>().is_err());
    }
}
