//! Domain types shared by every stage of the pipeline.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar position in meters, agent-centric frame.
pub type Point = [f64; 2];

/// Index into the discrete mode vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModeId(pub usize);

impl ModeId {
    pub const STOP: ModeId = ModeId(0);
    pub const FAST_FORWARD: ModeId = ModeId(1);
    pub const SLOW_FORWARD: ModeId = ModeId(2);
    pub const LEFT_TURN: ModeId = ModeId(3);
    pub const RIGHT_TURN: ModeId = ModeId(4);

    /// Size of the default maneuver vocabulary.
    pub const DEFAULT_VOCAB: usize = 5;

    pub fn index(self) -> usize {
        self.0
    }

    pub fn name(self) -> &'static str {
        match self.0 {
            0 => "stop",
            1 => "fast_forward",
            2 => "slow_forward",
            3 => "left_turn",
            4 => "right_turn",
            _ => "custom",
        }
    }
}

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridState {
    pub mode: ModeId,
    pub position: Point,
}

/// One predicted future: a mode and a position per step, plus the model's
/// log-likelihood of the whole sequence once evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridSequence {
    pub steps: Vec<HybridState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_likelihood: Option<f64>,
}

impl HybridSequence {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn positions(&self) -> Vec<Point> {
        self.steps.iter().map(|s| s.position).collect()
    }

    pub fn modes(&self) -> Vec<ModeId> {
        self.steps.iter().map(|s| s.mode).collect()
    }

    pub fn endpoint(&self) -> Point {
        self.steps.last().map(|s| s.position).unwrap_or([0.0, 0.0])
    }

    /// Log-likelihood, or negative infinity when the sequence was never scored.
    pub fn ll(&self) -> f64 {
        self.log_likelihood.unwrap_or(f64::NEG_INFINITY)
    }
}

/// One dataset example: an observed track, its future, per-step future modes
/// and the lane centerlines around the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    pub observed: Vec<Point>,
    pub future: Vec<Point>,
    pub future_modes: Vec<ModeId>,
    pub centerlines: Vec<Vec<Point>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Adaptive learned proposal, all three loss terms.
    Full,
    /// Modes sampled from the transition head; coverage and regularization off.
    TransitionOnly,
    /// Learned proposal without access to previously generated samples.
    NonadaptiveProposal,
    /// Trained on the min-of-K coverage loss alone.
    CoverageOnly,
    /// One-mode vocabulary; only the continuous part is stochastic.
    SingleMode,
    /// Decoder built from affine maps only.
    LinearDecoder,
    /// Every sample keeps one mode for the whole horizon.
    FixedModeBaseline,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::TransitionOnly,
        Variant::NonadaptiveProposal,
        Variant::CoverageOnly,
        Variant::SingleMode,
        Variant::LinearDecoder,
        Variant::FixedModeBaseline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::TransitionOnly => "transition_only",
            Variant::NonadaptiveProposal => "nonadaptive_proposal",
            Variant::CoverageOnly => "coverage_only",
            Variant::SingleMode => "single_mode",
            Variant::LinearDecoder => "linear_decoder",
            Variant::FixedModeBaseline => "fixed_mode_baseline",
        }
    }

    /// Whether the proposal head sees previously generated sequences.
    pub fn is_adaptive(self) -> bool {
        !matches!(self, Variant::TransitionOnly | Variant::NonadaptiveProposal)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Number of discrete modes |Z|.
    pub vocab_size: usize,
    /// Prediction horizon H in steps (10 Hz).
    pub horizon: usize,
    /// Observed history length in steps.
    pub obs_horizon: usize,
    pub hidden_size: usize,
    /// K: rollouts per example for the coverage loss.
    pub coverage_samples: usize,
    /// M: sequences generated at inference before selection.
    pub num_samples: usize,
    /// N: sequences kept after selection.
    pub num_selected: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gumbel_temperature: f64,
    pub dropout: f64,
    /// Add unit-variance noise to continuous samples instead of using the mean.
    pub continuous_noise: bool,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: ModeId::DEFAULT_VOCAB,
            horizon: 30,
            obs_horizon: 20,
            hidden_size: 32,
            coverage_samples: 6,
            num_samples: 50,
            num_selected: 6,
            alpha: 1.0,
            beta: 1.0,
            gumbel_temperature: 1.0,
            dropout: 0.1,
            continuous_noise: false,
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    /// Default configuration adjusted for `variant` (the single-mode variant
    /// collapses the vocabulary to one mode).
    pub fn for_variant(variant: Variant) -> Self {
        Self::default().with_variant(variant)
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        if variant == Variant::SingleMode {
            self.vocab_size = 1;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.vocab_size < 1 {
            return fail("vocab_size must be at least 1".into());
        }
        if self.horizon < 1 || self.obs_horizon < 2 {
            return fail("horizon must be >= 1 and obs_horizon >= 2".into());
        }
        if self.hidden_size < 1 {
            return fail("hidden_size must be at least 1".into());
        }
        if self.coverage_samples < 1 {
            return fail("coverage_samples (K) must be at least 1".into());
        }
        if self.num_selected > self.num_samples {
            return fail(format!(
                "num_selected (N={}) exceeds num_samples (M={})",
                self.num_selected, self.num_samples
            ));
        }
        if self.variant == Variant::SingleMode && self.vocab_size != 1 {
            return fail("single_mode variant requires vocab_size = 1".into());
        }
        if !(self.gumbel_temperature > 0.0) {
            return fail("gumbel_temperature must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)".into());
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return fail("alpha and beta must be non-negative".into());
        }
        Ok(())
    }

    /// Whether two configs describe the same parameter layout.
    pub fn same_architecture(&self, other: &ModelConfig) -> bool {
        self.vocab_size == other.vocab_size
            && self.horizon == other.horizon
            && self.obs_horizon == other.obs_horizon
            && self.hidden_size == other.hidden_size
            && self.variant == other.variant
    }
}

fn check_points(field: &str, points: &[Point]) -> Result<()> {
    for (index, p) in points.iter().enumerate() {
        if !p[0].is_finite() || !p[1].is_finite() {
            return Err(Error::NonFinite {
                field: field.to_string(),
                index,
            });
        }
    }
    Ok(())
}

fn check_len(field: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            field: field.to_string(),
            expected,
            actual,
        });
    }
    Ok(())
}

/// Checks a record against the configured horizons and vocabulary.
pub fn validate_record(record: SceneRecord, config: &ModelConfig) -> Result<SceneRecord> {
    check_len("observed", config.obs_horizon, record.observed.len())?;
    check_len("future", config.horizon, record.future.len())?;
    check_len(
        "future_modes",
        record.future.len(),
        record.future_modes.len(),
    )?;
    check_points("observed", &record.observed)?;
    check_points("future", &record.future)?;
    for (i, line) in record.centerlines.iter().enumerate() {
        check_points(&format!("centerlines[{i}]"), line)?;
    }
    if let Some(m) = record
        .future_modes
        .iter()
        .find(|m| m.index() >= config.vocab_size)
    {
        return Err(Error::ModeOutOfRange {
            field: "future_modes".into(),
            mode: m.index(),
            vocab_size: config.vocab_size,
        });
    }
    Ok(record)
}
