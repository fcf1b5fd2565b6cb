//! Min-over-samples displacement and mode errors, and mixture NLL.

use crate::error::{Error, Result};
use crate::model::LOG_2PI;
use crate::nn::log_sum_exp;
use crate::select::SelectionResult;
use crate::types::{ModeId, Point};

/// Steps in the 1 s and 3 s evaluation cuts at 10 Hz.
pub const ONE_SECOND: usize = 10;
pub const THREE_SECONDS: usize = 30;

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// `(minADE, minFDE)` over the first `horizon` steps. The two minima are
/// taken independently.
pub fn min_ade_fde(
    predictions: &[Vec<Point>],
    truth: &[Point],
    horizon: usize,
) -> Result<(f64, f64)> {
    if predictions.is_empty() {
        return Err(Error::NoPredictions);
    }
    if horizon == 0 {
        return Err(Error::InvalidConfig(
            "evaluation horizon must be positive".into(),
        ));
    }
    let (mut ade, mut fde) = (f64::INFINITY, f64::INFINITY);
    for p in predictions {
        let available = p.len().min(truth.len());
        if horizon > available {
            return Err(Error::HorizonTooLong {
                requested: horizon,
                available,
            });
        }
        let sum: f64 = p[..horizon]
            .iter()
            .zip(&truth[..horizon])
            .map(|(a, b)| dist(*a, *b))
            .sum();
        ade = ade.min(sum / horizon as f64);
        fde = fde.min(dist(p[horizon - 1], truth[horizon - 1]));
    }
    Ok((ade, fde))
}

/// Smallest fraction of steps with a wrong mode.
pub fn min_der(predictions: &[Vec<ModeId>], truth: &[ModeId]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::NoPredictions);
    }
    if truth.is_empty() {
        return Err(Error::InvalidConfig("empty mode sequence".into()));
    }
    let mut best = f64::INFINITY;
    for p in predictions {
        if p.len() != truth.len() {
            return Err(Error::DimensionMismatch {
                field: "predicted modes".into(),
                expected: truth.len(),
                actual: p.len(),
            });
        }
        let wrong = p.iter().zip(truth).filter(|(a, b)| a != b).count();
        best = best.min(wrong as f64 / truth.len() as f64);
    }
    Ok(best)
}

/// Negative log of the probability-weighted mixture of unit-variance
/// Gaussian trajectories centred on the selected samples.
pub fn nll(selection: &SelectionResult, truth: &[Point]) -> Result<f64> {
    if selection.selected.is_empty() {
        return Err(Error::NoPredictions);
    }
    let mut terms = Vec::with_capacity(selection.selected.len());
    for (s, &p) in selection.selected.iter().zip(&selection.probabilities) {
        if s.len() != truth.len() {
            return Err(Error::DimensionMismatch {
                field: "prediction".into(),
                expected: truth.len(),
                actual: s.len(),
            });
        }
        if p <= 0.0 {
            continue;
        }
        let log_density: f64 = s
            .steps
            .iter()
            .zip(truth)
            .map(|(st, o)| {
                let d = dist(st.position, *o);
                -LOG_2PI - 0.5 * d * d
            })
            .sum();
        terms.push(p.ln() + log_density);
    }
    if terms.is_empty() {
        return Err(Error::InvalidConfig(
            "selection probabilities are all zero".into(),
        ));
    }
    Ok(-log_sum_exp(&terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{HybridSequence, HybridState};

    fn line(h: usize, offset: Point) -> Vec<Point> {
        (0..h).map(|i| [i as f64 + offset[0], offset[1]]).collect()
    }

    fn as_seq(pts: &[Point]) -> HybridSequence {
        HybridSequence {
            steps: pts
                .iter()
                .map(|&p| HybridState {
                    mode: ModeId(1),
                    position: p,
                })
                .collect(),
            log_likelihood: Some(0.0),
        }
    }

    #[test]
    fn ade_fde_examples() {
        let gt = line(30, [0.0, 0.0]);
        assert_eq!(
            min_ade_fde(std::slice::from_ref(&gt), &gt, 30).unwrap(),
            (0.0, 0.0)
        );
        let off = line(30, [3.0, 4.0]);
        let (a, f) = min_ade_fde(std::slice::from_ref(&off), &gt, 30).unwrap();
        assert!((a - 5.0).abs() < 1e-12 && (f - 5.0).abs() < 1e-12);
        assert_eq!(
            min_ade_fde(&[off, gt.clone()], &gt, 30).unwrap(),
            (0.0, 0.0)
        );
        assert!(matches!(
            min_ade_fde(std::slice::from_ref(&gt), &gt, 31),
            Err(Error::HorizonTooLong { .. })
        ));
        assert!(matches!(
            min_ade_fde(&[], &gt, 30),
            Err(Error::NoPredictions)
        ));
    }

    #[test]
    fn one_second_cut_uses_first_ten_steps() {
        let gt = line(30, [0.0, 0.0]);
        let mut p = gt.clone();
        for q in p.iter_mut().skip(ONE_SECOND) {
            q[1] += 100.0;
        }
        assert_eq!(min_ade_fde(&[p], &gt, ONE_SECOND).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn der_examples() {
        let gt = vec![ModeId(1); 30];
        assert_eq!(min_der(std::slice::from_ref(&gt), &gt).unwrap(), 0.0);
        let mut p = gt.clone();
        for m in p.iter_mut().take(3) {
            *m = ModeId(4);
        }
        assert!((min_der(&[p, vec![ModeId(0); 30]], &gt).unwrap() - 0.1).abs() < 1e-12);
        assert!(min_der(&[vec![ModeId(1); 29]], &gt).is_err());
        let single = vec![ModeId(0); 30];
        assert_eq!(
            min_der(std::slice::from_ref(&single), &single).unwrap(),
            0.0
        );
    }

    #[test]
    fn nll_examples() {
        let gt = line(30, [0.0, 0.0]);
        let sel = SelectionResult {
            indices: vec![0],
            selected: vec![as_seq(&gt)],
            probabilities: vec![1.0],
        };
        let base = nll(&sel, &gt).unwrap();
        assert!((base - 30.0 * LOG_2PI).abs() < 1e-9);
        assert!((base - 55.136).abs() < 1e-3);

        let mut two = sel.clone();
        two.indices.push(1);
        two.selected.push(as_seq(&line(30, [5.0, 5.0])));
        two.probabilities.push(0.0);
        assert_eq!(nll(&two, &gt).unwrap(), base);

        let mut moved = gt.clone();
        moved[7][1] += 1.0;
        let sel_moved = SelectionResult {
            selected: vec![as_seq(&moved)],
            ..sel
        };
        assert!((nll(&sel_moved, &gt).unwrap() - base - 0.5).abs() < 1e-9);
    }
}
