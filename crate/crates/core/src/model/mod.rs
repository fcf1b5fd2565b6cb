//! The probabilistic hybrid automaton: scene encoder, transition head,
//! dynamics head and learned proposal.

pub mod checkpoint;
pub mod gumbel;
pub(crate) mod network;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{initial_mode, LabelThresholds};
use crate::error::{Error, Result};
use crate::nn::{softmax, Ctx, ParamSet, RecurrentState, Tape, Var};
use crate::seed::derive_seed;
use crate::types::{HybridSequence, HybridState, ModeId, ModelConfig, Point, SceneRecord};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use network::{InitialState, LOG_2PI, POS_SCALE};
pub(crate) use network::{ModeSource, Net, Policy, SampleOpts};

/// Encoder output: the initial decoder state.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
    /// Encoder input at every observed step.
    pub context: Vec<Vec<f64>>,
}

/// Result of one decoder step.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderStep {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
    /// Recurrent output `y_t`.
    pub output: Vec<f64>,
    pub transition_logits: Vec<f64>,
    /// Logits the mode was drawn from. Equal to the transition logits when
    /// the variant samples from T or forces the mode.
    pub proposal_logits: Vec<f64>,
    pub state: HybridState,
    /// Mean of the continuous transition.
    pub mean: Point,
    /// `log P_T(z_t) + log N(x_t; mean, I)`.
    pub log_likelihood: f64,
}

impl DecoderStep {
    pub fn transition_probs(&self) -> Vec<f64> {
        softmax(&self.transition_logits)
    }

    pub fn proposal_probs(&self) -> Vec<f64> {
        softmax(&self.proposal_logits)
    }
}

#[derive(Debug, Clone)]
pub struct PhaModel {
    config: ModelConfig,
    params: ParamSet,
    pub(crate) net: Net,
}

fn no_dropout(rng: &mut ChaCha8Rng) -> Ctx<'_, ChaCha8Rng> {
    Ctx {
        train: false,
        dropout: 0.0,
        rng,
    }
}

impl PhaModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init"));
        let mut params = ParamSet::default();
        let net = Net::build(&config, &mut params, &mut rng);
        Ok(Self {
            config,
            params,
            net,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    pub(crate) fn policy(&self) -> Policy {
        Policy::for_variant(self.config.variant)
    }

    /// Last observed position and velocity, with the mode labeled from the
    /// observed track (collapsed to mode 0 when it falls outside the
    /// vocabulary).
    pub fn initial_state(&self, observed: &[Point]) -> Result<InitialState> {
        let n = observed.len();
        if n < 2 {
            return Err(Error::TooFewPoints {
                required: 2,
                actual: n,
            });
        }
        let last = observed[n - 1];
        let prev = observed[n - 2];
        let mut mode = initial_mode(observed, &LabelThresholds::default())?;
        if mode.index() >= self.config.vocab_size {
            mode = ModeId(0);
        }
        Ok(InitialState {
            position: last,
            velocity: [last[0] - prev[0], last[1] - prev[1]],
            mode,
        })
    }

    pub(crate) fn check_observed(&self, record: &SceneRecord) -> Result<()> {
        if record.observed.len() != self.config.obs_horizon {
            return Err(Error::DimensionMismatch {
                field: "observed".into(),
                expected: self.config.obs_horizon,
                actual: record.observed.len(),
            });
        }
        Ok(())
    }

    pub fn encode(&self, record: &SceneRecord) -> Result<EncoderState> {
        self.check_observed(record)?;
        let mut tape = Tape::new(&self.params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = no_dropout(&mut rng);
        let enc = self
            .net
            .encode(&mut tape, &mut ctx, &record.observed, &record.centerlines);
        Ok(EncoderState {
            hidden: tape.value(enc.state.h).to_vec(),
            cell: tape.value(enc.state.c).to_vec(),
            context: enc
                .context
                .iter()
                .map(|&c| tape.value(c).to_vec())
                .collect(),
        })
    }

    /// Encoding of previously generated sequences as seen by the proposal.
    /// Zero for an empty set and for non-adaptive variants.
    pub fn encode_previous_samples(&self, previous: &[HybridSequence]) -> Vec<f64> {
        let mut tape = Tape::new(&self.params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = no_dropout(&mut rng);
        let v = if self.config.variant.is_adaptive() {
            self.net.encode_samples(&mut tape, &mut ctx, previous)
        } else {
            tape.zeros(self.config.hidden_size)
        };
        tape.value(v).to_vec()
    }

    /// One decoder step from explicit values. Non-adaptive variants ignore
    /// `samples_encoding`.
    pub fn decode_step(
        &self,
        state: &EncoderState,
        previous: &HybridState,
        velocity: Point,
        samples_encoding: &[f64],
        rng: &mut impl Rng,
    ) -> Result<DecoderStep> {
        let h = self.config.hidden_size;
        if state.hidden.len() != h || state.cell.len() != h || samples_encoding.len() != h {
            return Err(Error::ShapeMismatch(format!(
                "decoder state and sample encoding must have length {h}"
            )));
        }
        if previous.mode.index() >= self.config.vocab_size {
            return Err(Error::ModeOutOfRange {
                field: "previous.mode".into(),
                mode: previous.mode.index(),
                vocab_size: self.config.vocab_size,
            });
        }
        let mut tape = Tape::new(&self.params);
        let mut ctx = Ctx {
            train: false,
            dropout: 0.0,
            rng,
        };
        let prev = RecurrentState {
            h: tape.input(&state.hidden),
            c: tape.input(&state.cell),
        };
        let input = self.net.input_from(
            &mut tape,
            &InitialState {
                position: previous.position,
                velocity,
                mode: previous.mode,
            },
        );
        let source = match self.policy() {
            Policy::Fixed(_) => ModeSource::Given(previous.mode),
            Policy::Transition => ModeSource::Transition,
            Policy::Proposal if self.config.variant.is_adaptive() => ModeSource::Proposal {
                samples: tape.input(samples_encoding),
            },
            Policy::Proposal => ModeSource::Proposal {
                samples: tape.zeros(h),
            },
        };
        let opts = SampleOpts::from_config(&self.config);
        let out = self
            .net
            .decode_step(&mut tape, &mut ctx, prev, input, source, None, opts);
        let p = tape.value(out.position);
        let m = tape.value(out.mean);
        let ll = tape.scalar(out.log_p_mode) + tape.scalar(out.log_p_pos);
        Ok(DecoderStep {
            hidden: tape.value(out.state.h).to_vec(),
            cell: tape.value(out.state.c).to_vec(),
            output: tape.value(out.output).to_vec(),
            transition_logits: tape.value(out.t_logits).to_vec(),
            proposal_logits: tape.value(out.q_logits.unwrap_or(out.t_logits)).to_vec(),
            state: HybridState {
                mode: out.mode,
                position: [p[0], p[1]],
            },
            mean: [m[0], m[1]],
            log_likelihood: ll,
        })
    }

    /// One sampled future conditioned on `previous` sequences. The fixed-mode
    /// baseline rolls out mode 0; use [`PhaModel::rollout_fixed_mode`] for
    /// the others.
    pub fn rollout(
        &self,
        record: &SceneRecord,
        previous: &[HybridSequence],
        rng: &mut impl Rng,
    ) -> Result<HybridSequence> {
        self.check_observed(record)?;
        let init = self.initial_state(&record.observed)?;
        let mut tape = Tape::new(&self.params);
        let mut ctx = Ctx {
            train: false,
            dropout: 0.0,
            rng,
        };
        let enc = self
            .net
            .encode(&mut tape, &mut ctx, &record.observed, &record.centerlines);
        let samples = self.samples_var(&mut tape, &mut ctx, previous);
        let opts = SampleOpts::from_config(&self.config);
        let out = self.net.rollout(
            &mut tape,
            &mut ctx,
            &enc,
            &init,
            self.policy(),
            samples,
            opts,
        );
        Ok(out.sequence)
    }

    fn samples_var<R: Rng>(
        &self,
        tape: &mut Tape,
        ctx: &mut Ctx<R>,
        previous: &[HybridSequence],
    ) -> Option<Var> {
        match self.policy() {
            Policy::Proposal if self.config.variant.is_adaptive() => {
                Some(self.net.encode_samples(tape, ctx, previous))
            }
            Policy::Proposal => Some(tape.zeros(self.config.hidden_size)),
            _ => None,
        }
    }

    /// Rollout with the mode held at `mode` for every step.
    pub fn rollout_fixed_mode(
        &self,
        record: &SceneRecord,
        mode: ModeId,
        rng: &mut impl Rng,
    ) -> Result<HybridSequence> {
        self.check_observed(record)?;
        if mode.index() >= self.config.vocab_size {
            return Err(Error::ModeOutOfRange {
                field: "mode".into(),
                mode: mode.index(),
                vocab_size: self.config.vocab_size,
            });
        }
        let init = self.initial_state(&record.observed)?;
        let mut tape = Tape::new(&self.params);
        let mut ctx = Ctx {
            train: false,
            dropout: 0.0,
            rng,
        };
        let enc = self
            .net
            .encode(&mut tape, &mut ctx, &record.observed, &record.centerlines);
        let opts = SampleOpts::from_config(&self.config);
        let out = self.net.rollout(
            &mut tape,
            &mut ctx,
            &enc,
            &init,
            Policy::Fixed(mode),
            None,
            opts,
        );
        Ok(out.sequence)
    }

    /// Generates `count` sequences for one scene, encoding the scene once.
    /// Under the adaptive proposal sample `k` is conditioned on samples
    /// `0..k`. The fixed-mode baseline cycles through the modes.
    pub fn sample_sequences(
        &self,
        record: &SceneRecord,
        count: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<HybridSequence>> {
        self.check_observed(record)?;
        let init = self.initial_state(&record.observed)?;
        let mut tape = Tape::new(&self.params);
        let mut ctx = Ctx {
            train: false,
            dropout: 0.0,
            rng,
        };
        let enc = self
            .net
            .encode(&mut tape, &mut ctx, &record.observed, &record.centerlines);
        let opts = SampleOpts::from_config(&self.config);
        let adaptive = self.config.variant.is_adaptive();
        let base_policy = self.policy();
        let zero = tape.zeros(self.config.hidden_size);
        let mut embeddings: Vec<Var> = Vec::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        for k in 0..count {
            let (policy, samples) = match base_policy {
                Policy::Fixed(_) => (Policy::Fixed(ModeId(k % self.config.vocab_size)), None),
                Policy::Transition => (Policy::Transition, None),
                Policy::Proposal if adaptive && !embeddings.is_empty() => {
                    let pooled = tape.max_pool(&embeddings);
                    let s = self.net.sample_pool.forward(&mut tape, &mut ctx, pooled);
                    (Policy::Proposal, Some(s))
                }
                Policy::Proposal => (Policy::Proposal, Some(zero)),
            };
            let r = self
                .net
                .rollout(&mut tape, &mut ctx, &enc, &init, policy, samples, opts);
            if adaptive {
                let f = tape.input(&self.net.sequence_features(&r.sequence));
                embeddings.push(self.net.sample_enc.forward(&mut tape, &mut ctx, f));
            }
            out.push(r.sequence);
        }
        Ok(out)
    }

    /// `log P(x_{1:H}, z_{1:H} | observation)` with unit-covariance Gaussian
    /// dynamics and teacher forcing. Independent of the proposal.
    pub fn sequence_log_likelihood(
        &self,
        record: &SceneRecord,
        future: &[Point],
        modes: &[ModeId],
    ) -> Result<f64> {
        self.check_observed(record)?;
        if future.len() != modes.len() {
            return Err(Error::DimensionMismatch {
                field: "modes".into(),
                expected: future.len(),
                actual: modes.len(),
            });
        }
        if future.len() > self.config.horizon {
            return Err(Error::HorizonTooLong {
                requested: future.len(),
                available: self.config.horizon,
            });
        }
        if let Some(m) = modes.iter().find(|m| m.index() >= self.config.vocab_size) {
            return Err(Error::ModeOutOfRange {
                field: "modes".into(),
                mode: m.index(),
                vocab_size: self.config.vocab_size,
            });
        }
        let init = self.initial_state(&record.observed)?;
        let mut tape = Tape::new(&self.params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = no_dropout(&mut rng);
        let enc = self
            .net
            .encode(&mut tape, &mut ctx, &record.observed, &record.centerlines);
        let opts = SampleOpts::from_config(&self.config);
        let ll = self
            .net
            .teacher_forced(&mut tape, &mut ctx, &enc, &init, future, modes, opts);
        Ok(tape.scalar(ll))
    }

    pub(crate) fn from_parts(config: ModelConfig, params: ParamSet) -> Result<Self> {
        let reference = Self::new(config.clone(), 0)?;
        let check = |cond: bool, msg: String| {
            if cond {
                Ok(())
            } else {
                Err(Error::CheckpointMismatch(msg))
            }
        };
        check(
            reference.params.len() == params.len(),
            format!(
                "expected {} tensors, found {}",
                reference.params.len(),
                params.len()
            ),
        )?;
        for ((name, t), (other_name, o)) in reference.params.iter().zip(params.iter()) {
            check(
                name == other_name,
                format!("expected tensor `{name}`, found `{other_name}`"),
            )?;
            check(
                t.rows == o.rows && t.cols == o.cols && o.data.len() == o.rows * o.cols,
                format!(
                    "tensor `{name}` has shape {}x{}, expected {}x{}",
                    o.rows, o.cols, t.rows, t.cols
                ),
            )?;
            check(
                o.data.iter().all(|v| v.is_finite()),
                format!("tensor `{name}` has non-finite values"),
            )?;
        }
        Ok(Self {
            config,
            params,
            net: reference.net,
        })
    }
}
