use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use phapred::eval::{min_ade_fde, min_der, nll};
use phapred::select::{
    normalized_probabilities, select, select_fps, select_most_likely, SampleSet, SelectionMethod,
};
use phapred::train::coverage_loss;
use phapred::{HybridSequence, HybridState, ModeId, Point};

fn pt() -> impl Strategy<Value = Point> {
    (-30.0..30.0f64, -30.0..30.0f64).prop_map(|(x, y)| [x, y])
}

fn track(len: usize) -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec(pt(), len)
}

fn seq(points: &[Point], ll: f64) -> HybridSequence {
    HybridSequence {
        steps: points
            .iter()
            .map(|&p| HybridState {
                mode: ModeId(0),
                position: p,
            })
            .collect(),
        log_likelihood: Some(ll),
    }
}

/// Endpoints and log-likelihoods of a random sample set.
fn sample_set() -> impl Strategy<Value = (Vec<Point>, Vec<f64>)> {
    (1usize..=12).prop_flat_map(|m| {
        (
            prop::collection::vec(pt(), m),
            prop::collection::vec(-60.0..0.0f64, m),
        )
    })
}

fn build(ends: &[Point], lls: &[f64]) -> SampleSet {
    SampleSet::new(ends.iter().zip(lls).map(|(&e, &l)| seq(&[e], l)).collect()).unwrap()
}

fn min_pairwise(points: &[Point]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.min((a[0] - b[0]).hypot(a[1] - b[1]));
        }
    }
    best
}

fn shift(points: &[Point], d: Point) -> Vec<Point> {
    points.iter().map(|p| [p[0] + d[0], p[1] + d[1]]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn selectors_return_a_weighted_subset((ends, lls) in sample_set(), frac in 0.0..=1.0f64, seed in any::<u64>()) {
        let set = build(&ends, &lls);
        let n = ((set.len() as f64 * frac).round() as usize).max(1);
        for method in SelectionMethod::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = select(&set, n, method, 2.0, &mut rng).unwrap();
            prop_assert_eq!(r.indices.len(), n);
            let mut sorted = r.indices.clone();
            sorted.sort_unstable();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), n, "{} repeated a sample", method);
            for (&i, s) in r.indices.iter().zip(&r.selected) {
                prop_assert_eq!(s, &set.sequences[i]);
            }
            let total: f64 = r.probabilities.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(r.probabilities.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn too_many_picks_is_an_error((ends, lls) in sample_set()) {
        let set = build(&ends, &lls);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for method in SelectionMethod::ALL {
            prop_assert!(select(&set, set.len() + 1, method, 2.0, &mut rng).is_err());
        }
    }

    #[test]
    fn fps_starts_with_the_most_likely((ends, lls) in sample_set()) {
        let set = build(&ends, &lls);
        let fps = select_fps(&set, 1).unwrap();
        let best = select_most_likely(&set, 1).unwrap();
        prop_assert_eq!(fps.indices, best.indices);
    }

    // The most-likely set contains the top sample, so its spread is at most
    // the optimum FPS approximates within a factor of two.
    #[test]
    fn fps_spread_is_at_least_half_of_most_likely((ends, lls) in sample_set(), frac in 0.0..=1.0f64) {
        let set = build(&ends, &lls);
        let n = ((set.len() as f64 * frac).round() as usize).clamp(2.min(set.len()), set.len());
        let spread = |idx: &[usize]| min_pairwise(&idx.iter().map(|&i| ends[i]).collect::<Vec<_>>());
        let fps = select_fps(&set, n).unwrap();
        let likely = select_most_likely(&set, n).unwrap();
        prop_assert!(spread(&fps.indices) >= 0.5 * spread(&likely.indices) - 1e-12);
    }

    #[test]
    fn probabilities_ignore_a_common_offset(lls in prop::collection::vec(-50.0..0.0f64, 1..8), c in -500.0..500.0f64) {
        let a = normalized_probabilities(&lls);
        let b = normalized_probabilities(&lls.iter().map(|l| l + c).collect::<Vec<_>>());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn displacement_metrics_are_translation_invariant(
        truth in track(10),
        preds in prop::collection::vec(track(10), 1..5),
        d in pt(),
        h in 1usize..=10,
    ) {
        let (a, f) = min_ade_fde(&preds, &truth, h).unwrap();
        let moved: Vec<Vec<Point>> = preds.iter().map(|p| shift(p, d)).collect();
        let (a2, f2) = min_ade_fde(&moved, &shift(&truth, d), h).unwrap();
        prop_assert!((a - a2).abs() < 1e-9 && (f - f2).abs() < 1e-9);
        prop_assert!(a >= 0.0 && f >= 0.0);
    }

    #[test]
    fn more_predictions_never_hurt(truth in track(8), preds in prop::collection::vec(track(8), 2..6)) {
        let mut last = (f64::INFINITY, f64::INFINITY);
        for k in 1..=preds.len() {
            let (a, f) = min_ade_fde(&preds[..k], &truth, 8).unwrap();
            prop_assert!(a <= last.0 && f <= last.1);
            last = (a, f);
        }
    }

    #[test]
    fn der_is_a_fraction_and_zero_on_truth(
        truth in prop::collection::vec(0usize..5, 1..20),
        flips in prop::collection::vec(any::<bool>(), 20),
    ) {
        let t: Vec<ModeId> = truth.iter().map(|&m| ModeId(m)).collect();
        let wrong: Vec<ModeId> = t.iter().zip(&flips).map(|(m, &f)| if f { ModeId((m.index() + 1) % 5) } else { *m }).collect();
        let d = min_der(std::slice::from_ref(&wrong), &t).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(min_der(&[wrong, t.clone()], &t).unwrap(), 0.0);
    }

    #[test]
    fn zero_weight_components_do_not_change_nll(truth in track(6), a in track(6), b in track(6)) {
        let one = phapred::select::SelectionResult {
            indices: vec![0],
            selected: vec![seq(&a, -1.0)],
            probabilities: vec![1.0],
        };
        let two = phapred::select::SelectionResult {
            indices: vec![0, 1],
            selected: vec![seq(&a, -1.0), seq(&b, -2.0)],
            probabilities: vec![1.0, 0.0],
        };
        prop_assert!((nll(&one, &truth).unwrap() - nll(&two, &truth).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn coverage_is_a_permutation_invariant_minimum(truth in track(5), samples in prop::collection::vec(track(5), 1..6), rot in 0usize..6) {
        let c = coverage_loss(&samples, &truth).unwrap();
        let mut rotated = samples.clone();
        let k = rot % rotated.len();
        rotated.rotate_left(k);
        prop_assert_eq!(c, coverage_loss(&rotated, &truth).unwrap());
        for s in &samples {
            prop_assert!(c <= coverage_loss(std::slice::from_ref(s), &truth).unwrap());
        }
        let mut more = samples.clone();
        more.push(truth.clone());
        prop_assert_eq!(coverage_loss(&more, &truth).unwrap(), 0.0);
    }
}

/// Greedy FPS does not always out-spread the most likely samples.
#[test]
fn fps_can_be_less_spread_than_most_likely() {
    let ends = [
        [-15.85, -21.82],
        [-16.64, 20.21],
        [22.76, 13.33],
        [19.01, 0.0],
    ];
    let lls = [0.0, 0.0, -44.9, 0.0];
    let set = build(&ends, &lls);
    let spread = |idx: &[usize]| min_pairwise(&idx.iter().map(|&i| ends[i]).collect::<Vec<_>>());
    let fps = select_fps(&set, 3).unwrap();
    let likely = select_most_likely(&set, 3).unwrap();
    assert_eq!(fps.indices, vec![0, 2, 1]);
    assert_eq!(likely.indices, vec![0, 1, 3]);
    assert!(spread(&fps.indices) < spread(&likely.indices));
}
