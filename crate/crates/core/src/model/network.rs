//! Tape-level encoder and decoder. Everything here records onto a [`Tape`]
//! so the same code serves inference, likelihood evaluation and training.

use rand::Rng;

use super::gumbel::{argmax, gumbel_noise, one_hot};
use crate::nn::{
    softmax, Ctx, Dense, Linear, Mlp, ParamId, ParamSet, Recurrent, RecurrentState, Tape, Var,
};
use crate::types::{HybridSequence, HybridState, ModeId, ModelConfig, Point, Variant};

/// Positions are divided by this before entering any network layer.
pub const POS_SCALE: f64 = 10.0;
pub const LOG_2PI: f64 = 1.837_877_066_409_345_3;

const PATH_FEATURES: usize = 4;
const POINT_FEATURES: usize = 4;

#[derive(Debug, Clone)]
pub(crate) struct Net {
    pub hidden: usize,
    pub vocab: usize,
    pub horizon: usize,
    pub path_mlp: Dense,
    pub point_mlp: Dense,
    pub attn_q: Linear,
    pub attn_k: Linear,
    pub attn_v: Linear,
    pub pool_query: ParamId,
    pub enc_cell: Recurrent,
    pub dec_cell: Recurrent,
    pub transition: Mlp,
    pub proposal: Mlp,
    pub dynamics: Mlp,
    pub sample_enc: Dense,
    pub sample_pool: Dense,
}

/// Where the mode of a decoder step comes from.
#[derive(Debug, Clone, Copy)]
pub(crate) enum ModeSource {
    /// Observed or forced mode.
    Given(ModeId),
    /// Gumbel sample from the transition head.
    Transition,
    /// Gumbel sample from the proposal head, conditioned on an encoding of
    /// previously generated sequences.
    Proposal { samples: Var },
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Policy {
    Proposal,
    Transition,
    Fixed(ModeId),
}

impl Policy {
    pub fn for_variant(variant: Variant) -> Policy {
        match variant {
            Variant::TransitionOnly => Policy::Transition,
            Variant::FixedModeBaseline => Policy::Fixed(ModeId(0)),
            _ => Policy::Proposal,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SampleOpts {
    /// Feed the relaxed (soft) Gumbel sample forward instead of the
    /// straight-through one-hot. Makes the loss smooth in the parameters.
    pub relaxed: bool,
    /// Add unit Gaussian noise to continuous samples.
    pub noise: bool,
    pub temperature: f64,
    /// Feed the transition distribution to the proposal as a constant.
    pub detach: bool,
}

impl SampleOpts {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        Self {
            relaxed: false,
            noise: cfg.continuous_noise,
            temperature: cfg.gumbel_temperature,
            detach: true,
        }
    }
}

/// Previous hybrid state as decoder input.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepInput {
    pub pos: Var,
    pub vel: Var,
    pub mode: Var,
}

/// Decoder starting point, as plain values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialState {
    pub position: Point,
    pub velocity: Point,
    pub mode: ModeId,
}

pub(crate) struct EncodedScene {
    pub state: RecurrentState,
    pub context: Vec<Var>,
}

pub(crate) struct StepVars {
    pub state: RecurrentState,
    pub output: Var,
    pub t_logits: Var,
    pub q_logits: Option<Var>,
    pub mode: ModeId,
    pub mode_vec: Var,
    pub mean: Var,
    pub position: Var,
    pub log_p_mode: Var,
    pub log_p_pos: Var,
}

pub(crate) struct RolloutVars {
    pub sequence: HybridSequence,
    pub positions: Vec<Var>,
    pub t_logits: Vec<Var>,
    pub q_logits: Vec<Var>,
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

impl Net {
    pub fn build(cfg: &ModelConfig, ps: &mut ParamSet, rng: &mut impl Rng) -> Net {
        let h = cfg.hidden_size;
        let z = cfg.vocab_size;
        let linear = cfg.variant == Variant::LinearDecoder;
        let pool_bound = (1.0 / h as f64).sqrt();
        Net {
            hidden: h,
            vocab: z,
            horizon: cfg.horizon,
            path_mlp: Dense::new(ps, "encoder.path_mlp", PATH_FEATURES, h, rng),
            point_mlp: Dense::new(ps, "encoder.map.point_mlp", POINT_FEATURES, h, rng),
            attn_q: Linear::new(ps, "encoder.map.attn.query", h, h, rng),
            attn_k: Linear::new(ps, "encoder.map.attn.key", h, h, rng),
            attn_v: Linear::new(ps, "encoder.map.attn.value", h, h, rng),
            pool_query: ps.add_uniform("encoder.map.pool_query", h, 1, pool_bound, rng),
            enc_cell: Recurrent::new(ps, "encoder.lstm", 2 * h, h, false, rng),
            dec_cell: Recurrent::new(ps, "decoder.cell", 4 + z, h, linear, rng),
            transition: Mlp::new(ps, "decoder.transition", h, h, z, linear, rng),
            proposal: Mlp::new(ps, "decoder.proposal", h + z + h, h, z, linear, rng),
            dynamics: Mlp::new(ps, "decoder.dynamics", h + z, h, 2, linear, rng),
            sample_enc: Dense::new(ps, "decoder.samples.encode", cfg.horizon * (2 + z), h, rng),
            sample_pool: Dense::new(ps, "decoder.samples.pool", h, h, rng),
        }
    }

    fn encode_map<R: Rng>(&self, tape: &mut Tape, ctx: &mut Ctx<R>, lines: &[Vec<Point>]) -> Var {
        let mut embeddings = Vec::new();
        for line in lines.iter().filter(|l| !l.is_empty()) {
            let pts: Vec<Var> = line
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let d = if line.len() < 2 {
                        [0.0, 0.0]
                    } else if i + 1 < line.len() {
                        sub(line[i + 1], *p)
                    } else {
                        sub(*p, line[i - 1])
                    };
                    let n = d[0].hypot(d[1]);
                    let t = if n > 0.0 {
                        [d[0] / n, d[1] / n]
                    } else {
                        [0.0, 0.0]
                    };
                    let f = tape.input(&[p[0] / POS_SCALE, p[1] / POS_SCALE, t[0], t[1]]);
                    self.point_mlp.forward(tape, ctx, f)
                })
                .collect();
            embeddings.push(tape.max_pool(&pts));
        }
        if embeddings.is_empty() {
            return tape.zeros(self.hidden);
        }

        let scale = 1.0 / (self.hidden as f64).sqrt();
        let qs: Vec<Var> = embeddings
            .iter()
            .map(|&e| self.attn_q.forward(tape, e))
            .collect();
        let ks: Vec<Var> = embeddings
            .iter()
            .map(|&e| self.attn_k.forward(tape, e))
            .collect();
        let vs: Vec<Var> = embeddings
            .iter()
            .map(|&e| self.attn_v.forward(tape, e))
            .collect();
        let attended: Vec<Var> = qs
            .iter()
            .map(|&q| {
                let scores: Vec<Var> = ks.iter().map(|&k| tape.dot(q, k)).collect();
                let s = tape.concat(&scores);
                let s = tape.scale(s, scale);
                let a = tape.softmax(s);
                tape.weighted_sum(a, &vs)
            })
            .collect();

        let u = tape.param(self.pool_query);
        let scores: Vec<Var> = attended.iter().map(|&o| tape.dot(u, o)).collect();
        let s = tape.concat(&scores);
        let s = tape.scale(s, scale);
        let w = tape.softmax(s);
        tape.weighted_sum(w, &attended)
    }

    pub fn encode<R: Rng>(
        &self,
        tape: &mut Tape,
        ctx: &mut Ctx<R>,
        observed: &[Point],
        centerlines: &[Vec<Point>],
    ) -> EncodedScene {
        let map = self.encode_map(tape, ctx, centerlines);
        let mut state = self.enc_cell.zero_state(tape);
        let mut context = Vec::with_capacity(observed.len());
        for (i, p) in observed.iter().enumerate() {
            let d = if i > 0 {
                sub(*p, observed[i - 1])
            } else if observed.len() > 1 {
                sub(observed[1], observed[0])
            } else {
                [0.0, 0.0]
            };
            let f = tape.input(&[p[0] / POS_SCALE, p[1] / POS_SCALE, d[0], d[1]]);
            let path = self.path_mlp.forward(tape, ctx, f);
            let x = tape.concat(&[path, map]);
            context.push(x);
            state = self.enc_cell.step(tape, x, state);
        }
        EncodedScene { state, context }
    }

    pub fn input_from(&self, tape: &mut Tape, init: &InitialState) -> StepInput {
        StepInput {
            pos: tape.input(&init.position),
            vel: tape.input(&init.velocity),
            mode: tape.input(&one_hot(init.mode.index(), self.vocab)),
        }
    }

    /// Features of a completed sequence for the sample encoder.
    pub fn sequence_features(&self, seq: &HybridSequence) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.horizon * (2 + self.vocab));
        for s in seq.steps.iter().take(self.horizon) {
            f.push(s.position[0] / POS_SCALE);
            f.push(s.position[1] / POS_SCALE);
            for m in 0..self.vocab {
                f.push(if m == s.mode.index() { 1.0 } else { 0.0 });
            }
        }
        f.resize(self.horizon * (2 + self.vocab), 0.0);
        f
    }

    /// [`Self::sequence_features`] with the positions kept on the tape.
    pub fn sequence_features_on(
        &self,
        tape: &mut Tape,
        seq: &HybridSequence,
        positions: &[Var],
    ) -> Var {
        let mut parts = Vec::with_capacity(2 * self.horizon);
        for (s, &p) in seq.steps.iter().zip(positions).take(self.horizon) {
            parts.push(tape.scale(p, 1.0 / POS_SCALE));
            parts.push(tape.input(&one_hot(s.mode.index(), self.vocab)));
        }
        let missing = self.horizon.saturating_sub(parts.len() / 2);
        if missing > 0 {
            parts.push(tape.zeros(missing * (2 + self.vocab)));
        }
        tape.concat(&parts)
    }

    /// Max-pooled encoding of previous sequences; the zero vector when there
    /// are none. Sequences enter as constants.
    pub fn encode_samples<R: Rng>(
        &self,
        tape: &mut Tape,
        ctx: &mut Ctx<R>,
        prev: &[HybridSequence],
    ) -> Var {
        if prev.is_empty() {
            return tape.zeros(self.hidden);
        }
        let embs: Vec<Var> = prev
            .iter()
            .map(|s| {
                let f = tape.input(&self.sequence_features(s));
                self.sample_enc.forward(tape, ctx, f)
            })
            .collect();
        let pooled = tape.max_pool(&embs);
        self.sample_pool.forward(tape, ctx, pooled)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn decode_step<R: Rng>(
        &self,
        tape: &mut Tape,
        ctx: &mut Ctx<R>,
        prev: RecurrentState,
        input: StepInput,
        source: ModeSource,
        observed: Option<Point>,
        opts: SampleOpts,
    ) -> StepVars {
        let pos = tape.scale(input.pos, 1.0 / POS_SCALE);
        let x = tape.concat(&[pos, input.vel, input.mode]);
        let state = self.dec_cell.step(tape, x, prev);
        let y = state.h;

        let t_logits = self.transition.forward(tape, ctx, y);
        let log_t = tape.log_softmax(t_logits);

        let (mode, mode_vec, q_logits) = match source {
            ModeSource::Given(m) => {
                let v = tape.input(&one_hot(m.index(), self.vocab));
                (m, v, None)
            }
            ModeSource::Transition | ModeSource::Proposal { .. } => {
                let q = match source {
                    ModeSource::Proposal { samples } => {
                        let tp = if opts.detach {
                            let tp = softmax(tape.value(t_logits));
                            tape.input(&tp)
                        } else {
                            tape.softmax(t_logits)
                        };
                        let qin = tape.concat(&[y, tp, samples]);
                        self.proposal.forward(tape, ctx, qin)
                    }
                    _ => t_logits,
                };
                let noise = gumbel_noise(self.vocab, ctx.rng);
                let g = tape.input(&noise);
                let perturbed = tape.add(q, g);
                let scaled = tape.scale(perturbed, 1.0 / opts.temperature);
                let soft = tape.softmax(scaled);
                let m = argmax(tape.value(soft));
                let v = if opts.relaxed {
                    soft
                } else {
                    tape.straight_through(soft, &one_hot(m, self.vocab))
                };
                (ModeId(m), v, Some(q))
            }
        };
        let log_p_mode = tape.element(log_t, mode.index());

        let fin = tape.concat(&[y, mode_vec]);
        let delta = self.dynamics.forward(tape, ctx, fin);
        let base = tape.add(input.pos, input.vel);
        let mean = tape.add(base, delta);

        let position = match observed {
            Some(o) => tape.input(&o),
            None if opts.noise => {
                let eps: Vec<f64> = (0..2)
                    .map(|_| ctx.rng.sample(rand_distr::StandardNormal))
                    .collect();
                let e = tape.input(&eps);
                tape.add(mean, e)
            }
            None => mean,
        };
        let diff = tape.sub(position, mean);
        let sq = tape.sq_norm(diff);
        let half = tape.scale(sq, -0.5);
        let log_p_pos = tape.offset(half, -LOG_2PI);

        StepVars {
            state,
            output: y,
            t_logits,
            q_logits,
            mode,
            mode_vec,
            mean,
            position,
            log_p_mode,
            log_p_pos,
        }
    }

    /// Samples one hybrid sequence over the horizon.
    #[allow(clippy::too_many_arguments)]
    pub fn rollout<R: Rng>(
        &self,
        tape: &mut Tape,
        ctx: &mut Ctx<R>,
        enc: &EncodedScene,
        init: &InitialState,
        policy: Policy,
        samples: Option<Var>,
        opts: SampleOpts,
    ) -> RolloutVars {
        let mut input = self.input_from(tape, init);
        let mut state = enc.state;
        let mut steps = Vec::with_capacity(self.horizon);
        let mut positions = Vec::with_capacity(self.horizon);
        let mut t_logits = Vec::with_capacity(self.horizon);
        let mut q_logits = Vec::with_capacity(self.horizon);
        let mut terms = Vec::with_capacity(2 * self.horizon);
        for _ in 0..self.horizon {
            let source = match policy {
                Policy::Fixed(m) => ModeSource::Given(m),
                Policy::Transition => ModeSource::Transition,
                Policy::Proposal => ModeSource::Proposal {
                    samples: samples.unwrap_or_else(|| tape.zeros(self.hidden)),
                },
            };
            let out = self.decode_step(tape, ctx, state, input, source, None, opts);
            let p = tape.value(out.position);
            steps.push(HybridState {
                mode: out.mode,
                position: [p[0], p[1]],
            });
            positions.push(out.position);
            t_logits.push(out.t_logits);
            if let Some(q) = out.q_logits {
                q_logits.push(q);
            }
            terms.push(out.log_p_mode);
            terms.push(out.log_p_pos);
            let vel = tape.sub(out.position, input.pos);
            input = StepInput {
                pos: out.position,
                vel,
                mode: out.mode_vec,
            };
            state = out.state;
        }
        let ll = tape.sum_scalars(&terms);
        let sequence = HybridSequence {
            steps,
            log_likelihood: Some(tape.scalar(ll)),
        };
        RolloutVars {
            sequence,
            positions,
            t_logits,
            q_logits,
        }
    }

    /// Log-likelihood of an observed future with ground-truth previous states
    /// fed to the decoder.
    #[allow(clippy::too_many_arguments)]
    pub fn teacher_forced<R: Rng>(
        &self,
        tape: &mut Tape,
        ctx: &mut Ctx<R>,
        enc: &EncodedScene,
        init: &InitialState,
        future: &[Point],
        modes: &[ModeId],
        opts: SampleOpts,
    ) -> Var {
        let mut input = self.input_from(tape, init);
        let mut prev_pos = init.position;
        let mut state = enc.state;
        let mut terms = Vec::with_capacity(2 * future.len());
        for (&o, &m) in future.iter().zip(modes) {
            let out =
                self.decode_step(tape, ctx, state, input, ModeSource::Given(m), Some(o), opts);
            terms.push(out.log_p_mode);
            terms.push(out.log_p_pos);
            input = StepInput {
                pos: out.position,
                vel: tape.input(&sub(o, prev_pos)),
                mode: out.mode_vec,
            };
            prev_pos = o;
            state = out.state;
        }
        tape.sum_scalars(&terms)
    }
}
