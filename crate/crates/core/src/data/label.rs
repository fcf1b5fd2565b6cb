//! Rule-based maneuver labeling from positions sampled at a fixed rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ModeId, Point};

/// Sampling period of every trajectory in the pipeline (10 Hz).
pub const STEP_SECONDS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelThresholds {
    /// Heading-change threshold in degrees per step.
    pub theta: f64,
    /// Fast-forward speed threshold, m/s.
    pub v_fast: f64,
    /// Slow-forward speed threshold, m/s.
    pub v_slow: f64,
    pub step_seconds: f64,
}

impl Default for LabelThresholds {
    fn default() -> Self {
        Self {
            theta: 2.0,
            v_fast: 1.0,
            v_slow: 0.05,
            step_seconds: STEP_SECONDS,
        }
    }
}

impl LabelThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0) {
            return Err(Error::InvalidConfig("theta must be positive".into()));
        }
        if !(self.v_fast > self.v_slow && self.v_slow > 0.0) {
            return Err(Error::InvalidConfig(
                "thresholds must satisfy v_fast > v_slow > 0".into(),
            ));
        }
        if !(self.step_seconds > 0.0) {
            return Err(Error::InvalidConfig("step_seconds must be positive".into()));
        }
        Ok(())
    }

    /// The rule chain: left turn, right turn, fast, slow, stop.
    pub fn classify(&self, heading_change_deg: f64, speed: f64) -> ModeId {
        if heading_change_deg > self.theta {
            ModeId::LEFT_TURN
        } else if heading_change_deg < -self.theta {
            ModeId::RIGHT_TURN
        } else if speed > self.v_fast {
            ModeId::FAST_FORWARD
        } else if speed > self.v_slow {
            ModeId::SLOW_FORWARD
        } else {
            ModeId::STOP
        }
    }
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

/// Signed angle from `a` to `b` in degrees, counter-clockwise positive.
fn turn_angle_deg(a: Point, b: Point) -> f64 {
    let cross = a[0] * b[1] - a[1] * b[0];
    let dot = a[0] * b[0] + a[1] * b[1];
    cross.atan2(dot).to_degrees()
}

/// Labels every point of `trajectory`.
///
/// Step `i` uses the backward displacement `p[i] - p[i-1]` for speed and the
/// turn between the two displacements ending at `p[i]` for heading change.
/// The leading points that lack enough history borrow the first value that
/// can be computed. Heading is undefined below the slow-speed threshold, so
/// a displacement that short contributes zero heading change.
pub fn auto_label(trajectory: &[Point], thresholds: &LabelThresholds) -> Result<Vec<ModeId>> {
    thresholds.validate()?;
    let n = trajectory.len();
    if n < 2 {
        return Err(Error::TooFewPoints {
            required: 2,
            actual: n,
        });
    }
    let dt = thresholds.step_seconds;
    let min_disp = thresholds.v_slow * dt;

    let disp: Vec<Point> = trajectory.windows(2).map(|w| sub(w[1], w[0])).collect();
    let norm = |d: Point| d[0].hypot(d[1]);

    let speed_at = |i: usize| norm(disp[i.max(1) - 1]) / dt;
    let heading_at = |i: usize| -> f64 {
        if n < 3 {
            return 0.0;
        }
        let i = i.max(2);
        let (a, b) = (disp[i - 2], disp[i - 1]);
        if norm(a) < min_disp || norm(b) < min_disp {
            0.0
        } else {
            turn_angle_deg(a, b)
        }
    };

    Ok((0..n)
        .map(|i| thresholds.classify(heading_at(i), speed_at(i)))
        .collect())
}

/// Labels the future steps of a track, using the tail of the observed path
/// so that the first future step has a full backward difference.
pub fn label_future(
    observed: &[Point],
    future: &[Point],
    thresholds: &LabelThresholds,
) -> Result<Vec<ModeId>> {
    let tail = observed.len().min(2);
    let mut joined: Vec<Point> = observed[observed.len() - tail..].to_vec();
    joined.extend_from_slice(future);
    let labels = auto_label(&joined, thresholds)?;
    Ok(labels[tail..].to_vec())
}

/// Mode at the most recent observed step.
pub fn initial_mode(observed: &[Point], thresholds: &LabelThresholds) -> Result<ModeId> {
    let labels = auto_label(observed, thresholds)?;
    Ok(*labels
        .last()
        .expect("auto_label returns one label per point"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arc(speed: f64, turn_deg: f64, n: usize) -> Vec<Point> {
        let mut p = [0.0, 0.0];
        let mut heading: f64 = 0.0;
        let mut out = vec![p];
        for _ in 1..n {
            p = [
                p[0] + speed * STEP_SECONDS * heading.to_radians().cos(),
                p[1] + speed * STEP_SECONDS * heading.to_radians().sin(),
            ];
            out.push(p);
            heading += turn_deg;
        }
        out
    }

    #[test]
    fn stationary_is_stop() {
        let t = vec![[1.0, 2.0]; 10];
        let labels = auto_label(&t, &LabelThresholds::default()).unwrap();
        assert!(labels.iter().all(|&m| m == ModeId::STOP));
    }

    #[test]
    fn straight_two_mps_is_fast_forward() {
        let t = arc(2.0, 0.0, 30);
        let labels = auto_label(&t, &LabelThresholds::default()).unwrap();
        assert_eq!(labels.len(), 30);
        assert!(labels.iter().all(|&m| m == ModeId::FAST_FORWARD));
    }

    #[test]
    fn slow_left_arc_is_left_turn() {
        let t = arc(0.5, 3.0, 30);
        let labels = auto_label(&t, &LabelThresholds::default()).unwrap();
        assert!(labels.iter().all(|&m| m == ModeId::LEFT_TURN), "{labels:?}");
        let t = arc(0.5, -3.0, 30);
        let labels = auto_label(&t, &LabelThresholds::default()).unwrap();
        assert!(labels.iter().all(|&m| m == ModeId::RIGHT_TURN));
    }

    #[test]
    fn slow_straight_is_slow_forward() {
        let t = arc(0.5, 0.0, 5);
        let labels = auto_label(&t, &LabelThresholds::default()).unwrap();
        assert!(labels.iter().all(|&m| m == ModeId::SLOW_FORWARD));
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(
            auto_label(&[[0.0, 0.0]], &LabelThresholds::default()),
            Err(Error::TooFewPoints { .. })
        ));
    }

    #[test]
    fn two_points_use_speed_only() {
        let labels = auto_label(&[[0.0, 0.0], [0.3, 0.0]], &LabelThresholds::default()).unwrap();
        assert_eq!(labels, vec![ModeId::FAST_FORWARD; 2]);
    }

    #[test]
    fn doubling_speed_and_rate_keeps_heading_labels() {
        // Same geometry sampled twice as fast at twice the speed.
        let t = arc(3.0, 4.0, 20);
        let base = LabelThresholds::default();
        let fast = LabelThresholds {
            step_seconds: base.step_seconds / 2.0,
            ..base
        };
        let a = auto_label(&t, &base).unwrap();
        let b = auto_label(&t, &fast).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn label_future_uses_observed_tail() {
        let full = arc(5.0, 0.0, 10);
        let (obs, fut) = full.split_at(4);
        let labels = label_future(obs, fut, &LabelThresholds::default()).unwrap();
        assert_eq!(labels, vec![ModeId::FAST_FORWARD; 6]);
    }

    #[test]
    fn invalid_thresholds() {
        let t = LabelThresholds {
            v_fast: 0.01,
            ..Default::default()
        };
        assert!(auto_label(&arc(1.0, 0.0, 4), &t).is_err());
    }
}
