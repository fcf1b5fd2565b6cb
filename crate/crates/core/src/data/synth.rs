//! Synthetic driving scenes with known maneuver changes.
//!
//! Every scene is simulated from per-step speed and yaw-rate controls at
//! 10 Hz. The observed part is straight driving; the future part is a chain
//! of constant-curvature, constant-acceleration segments whose boundaries
//! fall inside the prediction horizon. Labels are derived from the simulated
//! future with the same rule chain the `label` stage uses.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::label::{label_future, LabelThresholds, STEP_SECONDS};
use super::smooth::{smooth_trajectory, SmootherConfig};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::types::{ModeId, Point, SceneRecord};

const LANE_WIDTH: f64 = 3.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    LaneFollow,
    LaneChangeMidHorizon,
    TurnAfterFollow,
    DecelerateToStop,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::LaneFollow,
        ScenarioKind::LaneChangeMidHorizon,
        ScenarioKind::TurnAfterFollow,
        ScenarioKind::DecelerateToStop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::LaneFollow => "lane_follow",
            ScenarioKind::LaneChangeMidHorizon => "lane_change_mid_horizon",
            ScenarioKind::TurnAfterFollow => "turn_after_follow",
            ScenarioKind::DecelerateToStop => "decelerate_to_stop",
        }
    }

    /// Whether scenes of this kind always change mode within the horizon.
    pub fn changes_mode(self) -> bool {
        self != ScenarioKind::LaneFollow
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidMix(format!("unknown scenario kind `{s}`")))
    }
}

/// Proportion of scenes per scenario kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMix(pub BTreeMap<ScenarioKind, f64>);

impl ScenarioMix {
    pub fn new(entries: impl IntoIterator<Item = (ScenarioKind, f64)>) -> Result<Self> {
        let mix = ScenarioMix(entries.into_iter().collect());
        mix.validate()?;
        Ok(mix)
    }

    /// Equal share of the three mode-changing kinds.
    pub fn intent_changing() -> Self {
        ScenarioMix(
            [
                (ScenarioKind::LaneChangeMidHorizon, 1.0 / 3.0),
                (ScenarioKind::TurnAfterFollow, 1.0 / 3.0),
                (ScenarioKind::DecelerateToStop, 1.0 / 3.0),
            ]
            .into_iter()
            .collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::InvalidMix("no scenario kinds given".into()));
        }
        if let Some((k, p)) = self.0.iter().find(|(_, p)| !(**p >= 0.0 && p.is_finite())) {
            return Err(Error::InvalidMix(format!(
                "proportion {p} for `{k}` is invalid"
            )));
        }
        let total: f64 = self.0.values().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidMix(format!(
                "proportions sum to {total}, not 1"
            )));
        }
        Ok(())
    }

    /// Scene count per kind, splitting `count` by largest remainder.
    pub fn allocate(&self, count: usize) -> Vec<(ScenarioKind, usize)> {
        let mut alloc: Vec<(ScenarioKind, usize, f64)> = self
            .0
            .iter()
            .map(|(&k, &p)| {
                let exact = p * count as f64;
                (k, exact.floor() as usize, exact - exact.floor())
            })
            .collect();
        let assigned: usize = alloc.iter().map(|a| a.1).sum();
        let mut order: Vec<usize> = (0..alloc.len()).collect();
        order.sort_by(|&a, &b| alloc[b].2.total_cmp(&alloc[a].2).then(a.cmp(&b)));
        for &i in order.iter().take(count.saturating_sub(assigned)) {
            alloc[i].1 += 1;
        }
        alloc.into_iter().map(|(k, n, _)| (k, n)).collect()
    }
}

impl Default for ScenarioMix {
    fn default() -> Self {
        ScenarioMix(ScenarioKind::ALL.into_iter().map(|k| (k, 0.25)).collect())
    }
}

impl FromStr for ScenarioMix {
    type Err = Error;

    /// Parses `kind=proportion` pairs separated by commas.
    fn from_str(s: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| {
                Error::InvalidMix(format!("expected kind=proportion, got `{part}`"))
            })?;
            let p: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidMix(format!("bad proportion `{v}`")))?;
            map.insert(k.trim().parse()?, p);
        }
        ScenarioMix::new(map)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub obs_horizon: usize,
    pub horizon: usize,
    /// Std-dev of i.i.d. position noise in meters; zero disables noise and
    /// smoothing.
    pub noise_std: f64,
    pub thresholds: LabelThresholds,
    pub smoother: SmootherConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            obs_horizon: 20,
            horizon: 30,
            noise_std: 0.0,
            thresholds: LabelThresholds::default(),
            smoother: SmootherConfig::default(),
        }
    }
}

/// Per-step controls: speed in m/s and yaw change in degrees for the step.
struct Controls {
    speed: Vec<f64>,
    yaw: Vec<f64>,
}

impl Controls {
    fn constant(n: usize, speed: f64) -> Self {
        Self {
            speed: vec![speed; n],
            yaw: vec![0.0; n],
        }
    }

    /// Positions after each step, starting from the origin heading along +x.
    /// The first point is the origin itself.
    fn integrate(&self) -> Vec<Point> {
        let mut p = [0.0, 0.0];
        let mut heading: f64 = 0.0;
        let mut out = Vec::with_capacity(self.speed.len() + 1);
        out.push(p);
        for (v, w) in self.speed.iter().zip(&self.yaw) {
            heading += w.to_radians();
            p = [
                p[0] + v * STEP_SECONDS * heading.cos(),
                p[1] + v * STEP_SECONDS * heading.sin(),
            ];
            out.push(p);
        }
        out
    }
}

fn arc_centerline(
    start: Point,
    speed: f64,
    yaw_deg: f64,
    total_deg: f64,
    step_len: f64,
) -> Vec<Point> {
    let steps = (total_deg / yaw_deg.abs()).ceil() as usize + 20;
    let mut p = start;
    let mut heading: f64 = 0.0;
    let mut out = vec![p];
    for i in 0..steps {
        if (i as f64) * yaw_deg.abs() < total_deg {
            heading += yaw_deg.to_radians();
        }
        p = [
            p[0] + speed * step_len * heading.cos(),
            p[1] + speed * step_len * heading.sin(),
        ];
        out.push(p);
    }
    out.into_iter().step_by(2).collect()
}

fn straight_lane(y: f64, x0: f64, x1: f64) -> Vec<Point> {
    let n = ((x1 - x0) / 2.0).ceil() as usize;
    (0..=n).map(|i| [x0 + 2.0 * i as f64, y]).collect()
}

struct Simulated {
    controls: Controls,
    extra_lanes: Vec<Vec<Point>>,
}

fn simulate(kind: ScenarioKind, obs: usize, horizon: usize, rng: &mut ChaCha8Rng) -> Simulated {
    let total = obs + horizon;
    match kind {
        ScenarioKind::LaneFollow => {
            let v0 = rng.gen_range(4.0..14.0);
            let accel = rng.gen_range(-0.5..0.5);
            let mut c = Controls::constant(total, v0);
            for i in obs..total {
                c.speed[i] = (v0 + accel * (i - obs + 1) as f64 * STEP_SECONDS).max(1.5);
            }
            Simulated {
                controls: c,
                extra_lanes: Vec::new(),
            }
        }
        ScenarioKind::LaneChangeMidHorizon => {
            let v: f64 = rng.gen_range(6.0..14.0);
            let yaw: f64 = rng.gen_range(3.0..5.5);
            let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let step = v * STEP_SECONDS;
            let ramp =
                ((LANE_WIDTH / (step * f64::to_radians(yaw))).sqrt().round() as usize).clamp(3, 9);
            let latest = horizon.saturating_sub(2 * ramp + 2).max(1);
            let start = rng.gen_range(1..=latest.min(14));
            let mut c = Controls::constant(total, v);
            for k in 0..ramp {
                if obs + start + k < total {
                    c.yaw[obs + start + k] = dir * yaw;
                }
                if obs + start + ramp + k < total {
                    c.yaw[obs + start + ramp + k] = -dir * yaw;
                }
            }
            Simulated {
                controls: c,
                extra_lanes: Vec::new(),
            }
        }
        ScenarioKind::TurnAfterFollow => {
            let v: f64 = rng.gen_range(4.0..9.0);
            let yaw: f64 = rng.gen_range(4.0..9.0);
            let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let start = rng.gen_range(3..=15.min(horizon.saturating_sub(4)).max(3));
            let turn_steps = (90.0 / yaw).ceil() as usize;
            let mut c = Controls::constant(total, v);
            for k in 0..turn_steps {
                if obs + start + k < total {
                    c.yaw[obs + start + k] = dir * yaw;
                }
            }
            // Turn lanes branch off the ego lane where the turn starts.
            let branch = [v * STEP_SECONDS * (start as f64 - 0.5), 0.0];
            let mut lanes = vec![arc_centerline(branch, v, dir * yaw, 90.0, STEP_SECONDS)];
            if rng.gen_bool(0.5) {
                lanes.push(arc_centerline(branch, v, -dir * yaw, 90.0, STEP_SECONDS));
            }
            Simulated {
                controls: c,
                extra_lanes: lanes,
            }
        }
        ScenarioKind::DecelerateToStop => {
            let v0 = rng.gen_range(3.0..10.0);
            let decel_start = rng.gen_range(0..=10usize);
            let stop_at = rng.gen_range((decel_start + 6)..=(horizon - 4).max(decel_start + 6));
            let decel = v0 / ((stop_at - decel_start) as f64 * STEP_SECONDS);
            let mut c = Controls::constant(total, v0);
            for j in 0..horizon {
                let elapsed = (j + 1).saturating_sub(decel_start) as f64 * STEP_SECONDS;
                c.speed[obs + j] = (v0 - decel * elapsed).max(0.0);
            }
            Simulated {
                controls: c,
                extra_lanes: Vec::new(),
            }
        }
    }
}

fn build_record(
    kind: ScenarioKind,
    index: usize,
    cfg: &GeneratorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SceneRecord> {
    let (obs, horizon) = (cfg.obs_horizon, cfg.horizon);
    let lateral = rng.gen_range(-0.3..0.3);
    for _attempt in 0..64 {
        let sim = simulate(kind, obs, horizon, rng);
        // integrate() yields total + 1 points; drop the first so there are
        // exactly obs + horizon.
        let mut pts = sim.controls.integrate();
        pts.remove(0);
        let origin = pts[obs - 1];
        let shifted: Vec<Point> = pts
            .iter()
            .map(|p| [p[0] - origin[0], p[1] - origin[1]])
            .collect();
        let (observed, future) = shifted.split_at(obs);

        let modes = label_future(observed, future, &cfg.thresholds)?;
        let distinct = {
            let mut m = modes.clone();
            m.sort();
            m.dedup();
            m.len()
        };
        if kind.changes_mode() && distinct < 2 {
            continue;
        }

        let back = observed[0][0] - 10.0;
        let front = future.iter().map(|p| p[0]).fold(60.0, f64::max) + 10.0;
        let mut centerlines: Vec<Vec<Point>> = [-LANE_WIDTH, 0.0, LANE_WIDTH]
            .iter()
            .map(|&dy| straight_lane(dy + lateral, back, front))
            .collect();
        for lane in sim.extra_lanes {
            centerlines.push(lane.into_iter().map(|p| [p[0], p[1] + lateral]).collect());
        }

        let mut record = SceneRecord {
            scene_id: format!("{}-{index:06}", kind.as_str()),
            observed: observed.to_vec(),
            future: future.to_vec(),
            future_modes: modes,
            centerlines,
        };

        if cfg.noise_std > 0.0 {
            let noise = Normal::new(0.0, cfg.noise_std)
                .map_err(|e| Error::InvalidConfig(format!("noise_std: {e}")))?;
            for p in record.observed.iter_mut().chain(record.future.iter_mut()) {
                p[0] += noise.sample(rng);
                p[1] += noise.sample(rng);
            }
            let mut joined = record.observed.clone();
            joined.extend_from_slice(&record.future);
            let smoothed = smooth_trajectory(&joined, &cfg.smoother)?;
            let (so, sf) = smoothed.split_at(obs);
            record.future_modes = label_future(so, sf, &cfg.thresholds)?;
        }
        return Ok(record);
    }
    Err(Error::InvalidConfig(format!(
        "could not simulate a mode-changing `{kind}` scene with horizon {horizon}"
    )))
}

/// Generates `count` scenes with the default geometry and labeling settings.
pub fn generate_synthetic(count: usize, seed: u64, mix: &ScenarioMix) -> Result<Vec<SceneRecord>> {
    generate_with(count, seed, mix, &GeneratorConfig::default())
}

pub fn generate_with(
    count: usize,
    seed: u64,
    mix: &ScenarioMix,
    cfg: &GeneratorConfig,
) -> Result<Vec<SceneRecord>> {
    mix.validate()?;
    cfg.thresholds.validate()?;
    if cfg.obs_horizon < 2 || cfg.horizon < 8 {
        return Err(Error::InvalidConfig(
            "generator needs obs_horizon >= 2 and horizon >= 8".into(),
        ));
    }
    let mut kinds: Vec<ScenarioKind> = mix
        .allocate(count)
        .into_iter()
        .flat_map(|(k, n)| std::iter::repeat_n(k, n))
        .collect();
    kinds.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        seed,
        "scenario-order",
    )));

    kinds
        .into_iter()
        .enumerate()
        .map(|(i, kind)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("scene/{i}")));
            build_record(kind, i, cfg, &mut rng)
        })
        .collect()
}

/// Number of distinct modes among a record's future labels.
pub fn distinct_modes(modes: &[ModeId]) -> usize {
    let mut m = modes.to_vec();
    m.sort();
    m.dedup();
    m.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::label::auto_label;
    use crate::types::{validate_record, ModelConfig};

    #[test]
    fn half_lane_change_mix_has_enough_mode_changes() {
        let mix = ScenarioMix::new([
            (ScenarioKind::LaneFollow, 0.5),
            (ScenarioKind::LaneChangeMidHorizon, 0.5),
        ])
        .unwrap();
        let recs = generate_synthetic(100, 7, &mix).unwrap();
        assert_eq!(recs.len(), 100);
        let changing = recs
            .iter()
            .filter(|r| distinct_modes(&r.future_modes) >= 2)
            .count();
        assert!(changing >= 50, "{changing}");
    }

    #[test]
    fn zero_count_is_empty() {
        assert!(generate_synthetic(0, 1, &ScenarioMix::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn deterministic_given_seed() {
        let mix = ScenarioMix::default();
        let a = serde_json::to_string(&generate_synthetic(40, 3, &mix).unwrap()).unwrap();
        let b = serde_json::to_string(&generate_synthetic(40, 3, &mix).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = serde_json::to_string(&generate_synthetic(40, 4, &mix).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn every_record_validates_and_is_agent_centric() {
        let cfg = ModelConfig::default();
        for r in generate_synthetic(80, 11, &ScenarioMix::default()).unwrap() {
            let last = *r.observed.last().unwrap();
            assert!(last[0].abs() < 1e-12 && last[1].abs() < 1e-12);
            let prev = r.observed[r.observed.len() - 2];
            assert!(prev[1].abs() < 1e-9 && prev[0] < 0.0, "heading along +x");
            validate_record(r, &cfg).unwrap();
        }
    }

    #[test]
    fn changing_kinds_always_change() {
        for r in generate_synthetic(120, 5, &ScenarioMix::intent_changing()).unwrap() {
            assert!(distinct_modes(&r.future_modes) >= 2, "{}", r.scene_id);
        }
    }

    #[test]
    fn stored_labels_agree_with_relabeling_future() {
        let th = LabelThresholds::default();
        let recs = generate_synthetic(200, 9, &ScenarioMix::default()).unwrap();
        let (mut agree, mut total) = (0usize, 0usize);
        for r in &recs {
            let relabeled = auto_label(&r.future, &th).unwrap();
            agree += relabeled
                .iter()
                .zip(&r.future_modes)
                .filter(|(a, b)| a == b)
                .count();
            total += relabeled.len();
        }
        assert!(agree as f64 >= 0.95 * total as f64, "{agree}/{total}");
    }

    #[test]
    fn noisy_generation_smooths_before_labeling() {
        let cfg = GeneratorConfig {
            noise_std: 0.05,
            ..Default::default()
        };
        let recs = generate_with(12, 2, &ScenarioMix::default(), &cfg).unwrap();
        assert_eq!(recs.len(), 12);
        for r in recs {
            validate_record(r, &ModelConfig::default()).unwrap();
        }
    }

    #[test]
    fn mix_parsing_and_validation() {
        let m: ScenarioMix = "lane_follow=0.5, decelerate_to_stop=0.5".parse().unwrap();
        assert_eq!(m.0.len(), 2);
        assert!("lane_follow=0.7".parse::<ScenarioMix>().is_err());
        assert!("warp=1.0".parse::<ScenarioMix>().is_err());
        assert!(ScenarioMix::new([
            (ScenarioKind::LaneFollow, -0.5),
            (ScenarioKind::TurnAfterFollow, 1.5)
        ])
        .is_err());
    }

    #[test]
    fn allocation_sums_to_count() {
        let m = ScenarioMix::intent_changing();
        for n in [0, 1, 2, 10, 101] {
            assert_eq!(m.allocate(n).iter().map(|a| a.1).sum::<usize>(), n);
        }
    }
}
