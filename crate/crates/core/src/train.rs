//! Losses and the training loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PhaModel, Policy, SampleOpts};
use crate::nn::{Adam, AdamConfig, Ctx, Grads, Tape, Var};
use crate::seed::{derive_indexed, derive_seed};
use crate::types::{validate_record, ModeId, ModelConfig, Point, SceneRecord, Variant};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Negative teacher-forced log-likelihood.
    pub mle: f64,
    pub coverage: f64,
    pub regularization: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn add(&mut self, o: &LossBreakdown) {
        self.mle += o.mle;
        self.coverage += o.coverage;
        self.regularization += o.regularization;
        self.total += o.total;
    }

    fn scaled(mut self, k: f64) -> Self {
        self.mle *= k;
        self.coverage *= k;
        self.regularization *= k;
        self.total *= k;
        self
    }
}

/// Min over samples of the summed squared position error.
pub fn coverage_loss(samples: &[Vec<Point>], truth: &[Point]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut best = f64::INFINITY;
    for s in samples {
        if s.len() != truth.len() {
            return Err(Error::DimensionMismatch {
                field: "sample".into(),
                expected: truth.len(),
                actual: s.len(),
            });
        }
        let e: f64 = s
            .iter()
            .zip(truth)
            .map(|(p, o)| (p[0] - o[0]).powi(2) + (p[1] - o[1]).powi(2))
            .sum();
        best = best.min(e);
    }
    Ok(best)
}

/// Sum over steps of the squared L2 distance between the two logit vectors.
pub fn regularization_loss(transition: &[Vec<f64>], proposal: &[Vec<f64>]) -> Result<f64> {
    if transition.len() != proposal.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} transition steps vs {} proposal steps",
            transition.len(),
            proposal.len()
        )));
    }
    let mut total = 0.0;
    for (t, q) in transition.iter().zip(proposal) {
        if t.len() != q.len() {
            return Err(Error::ShapeMismatch(format!(
                "logits of length {} vs {}",
                t.len(),
                q.len()
            )));
        }
        total += t.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(total)
}

/// Labels the model is trained against. The single-mode variant sees one
/// mode everywhere; every other variant, including the fixed-mode
/// baseline, uses the per-step labels.
pub fn training_labels(record: &SceneRecord, variant: Variant) -> Vec<ModeId> {
    match variant {
        Variant::SingleMode => vec![ModeId(0); record.future_modes.len()],
        _ => record.future_modes.clone(),
    }
}

/// How the stochastic parts of a loss evaluation behave.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    /// Dropout active.
    pub train: bool,
    /// Propagate the soft Gumbel sample instead of the straight-through
    /// one-hot. Used by gradient checks so the loss is smooth.
    pub relaxed: bool,
    /// Differentiate every term end to end. Training normally treats the
    /// regularizer target, the transition distribution read by the proposal
    /// and the earlier rollouts as constants.
    pub exact: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            train: true,
            relaxed: false,
            exact: false,
        }
    }
}

struct RecordLoss {
    total: Var,
    breakdown: LossBreakdown,
}

fn record_loss<R: Rng>(
    model: &PhaModel,
    tape: &mut Tape,
    ctx: &mut Ctx<R>,
    record: &SceneRecord,
    opts: LossOptions,
) -> Result<RecordLoss> {
    let cfg = model.config();
    let net = &model.net;
    let variant = cfg.variant;
    let labels = training_labels(record, variant);
    let init = model.initial_state(&record.observed)?;
    let sample_opts = SampleOpts {
        relaxed: opts.relaxed,
        detach: !opts.exact,
        ..SampleOpts::from_config(cfg)
    };

    let enc = net.encode(tape, ctx, &record.observed, &record.centerlines);
    let ll = net.teacher_forced(tape, ctx, &enc, &init, &record.future, &labels, sample_opts);
    let mle = tape.scale(ll, -1.0);

    let (alpha, beta) = match variant {
        Variant::TransitionOnly => (0.0, 0.0),
        Variant::CoverageOnly => (cfg.alpha, 0.0),
        _ => (cfg.alpha, cfg.beta),
    };
    let mut coverage = None;
    let mut regularization = None;
    if alpha > 0.0 || beta > 0.0 {
        let k = cfg.coverage_samples;
        let adaptive = variant.is_adaptive();
        let zero = tape.zeros(cfg.hidden_size);
        let mut embeddings: Vec<Var> = Vec::new();
        let mut errors = Vec::with_capacity(k);
        let mut regs = Vec::with_capacity(k);
        // The fixed-mode baseline trains exactly like the full model; its
        // modes are only pinned when sampling.
        let transition = matches!(model.policy(), Policy::Transition);
        for _ in 0..k {
            let (policy, samples) = if transition {
                (Policy::Transition, None)
            } else if adaptive && !embeddings.is_empty() {
                let pooled = tape.max_pool(&embeddings);
                (
                    Policy::Proposal,
                    Some(net.sample_pool.forward(tape, ctx, pooled)),
                )
            } else {
                (Policy::Proposal, Some(zero))
            };
            let r = net.rollout(tape, ctx, &enc, &init, policy, samples, sample_opts);
            let mut terms = Vec::with_capacity(r.positions.len());
            for (&p, o) in r.positions.iter().zip(&record.future) {
                let o = tape.input(o);
                let d = tape.sub(p, o);
                terms.push(tape.sq_norm(d));
            }
            errors.push(tape.sum_scalars(&terms));
            if !r.q_logits.is_empty() && matches!(policy, Policy::Proposal) {
                // Unless exact, T is a fixed target: Q moves toward T, not the reverse.
                let mut terms = Vec::with_capacity(r.q_logits.len());
                for (&t, &q) in r.t_logits.iter().zip(&r.q_logits) {
                    let target = if opts.exact {
                        t
                    } else {
                        let v = tape.value(t).to_vec();
                        tape.input(&v)
                    };
                    let d = tape.sub(q, target);
                    terms.push(tape.sq_norm(d));
                }
                regs.push(tape.sum_scalars(&terms));
            }
            if adaptive {
                // Earlier rollouts condition later ones as constants.
                let f = if opts.exact {
                    net.sequence_features_on(tape, &r.sequence, &r.positions)
                } else {
                    tape.input(&net.sequence_features(&r.sequence))
                };
                embeddings.push(net.sample_enc.forward(tape, ctx, f));
            }
        }
        coverage = Some(tape.min(&errors));
        if !regs.is_empty() {
            let s = tape.sum_scalars(&regs);
            regularization = Some(tape.scale(s, 1.0 / regs.len() as f64));
        }
    }

    let mut parts = Vec::new();
    let mut breakdown = LossBreakdown::default();
    if variant != Variant::CoverageOnly {
        parts.push(mle);
        breakdown.mle = tape.scalar(mle);
    }
    if let Some(c) = coverage.filter(|_| alpha > 0.0) {
        breakdown.coverage = tape.scalar(c);
        parts.push(tape.scale(c, alpha));
    }
    if let Some(r) = regularization.filter(|_| beta > 0.0) {
        breakdown.regularization = tape.scalar(r);
        parts.push(tape.scale(r, beta));
    }
    let total = tape.sum_scalars(&parts);
    breakdown.total = tape.scalar(total);
    Ok(RecordLoss { total, breakdown })
}

/// Total loss for one record and its gradient. `seed` fixes dropout masks
/// and Gumbel noise, so equal seeds give equal losses.
pub fn loss_and_grads(
    model: &PhaModel,
    record: &SceneRecord,
    opts: LossOptions,
    seed: u64,
) -> Result<(LossBreakdown, Grads)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ctx = Ctx {
        train: opts.train,
        dropout: model.config().dropout,
        rng: &mut rng,
    };
    let mut tape = Tape::new(model.params());
    let loss = record_loss(model, &mut tape, &mut ctx, record, opts)?;
    let mut grads = model.params().zero_grads();
    tape.backward(loss.total, &mut grads);
    Ok((loss.breakdown, grads))
}

/// Negative teacher-forced log-likelihood and its gradient, without dropout.
pub fn nll_and_grads(model: &PhaModel, record: &SceneRecord) -> Result<(f64, Grads)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ctx = Ctx {
        train: false,
        dropout: 0.0,
        rng: &mut rng,
    };
    let mut tape = Tape::new(model.params());
    let labels = training_labels(record, model.config().variant);
    let init = model.initial_state(&record.observed)?;
    let enc = model
        .net
        .encode(&mut tape, &mut ctx, &record.observed, &record.centerlines);
    let opts = SampleOpts::from_config(model.config());
    let ll = model.net.teacher_forced(
        &mut tape,
        &mut ctx,
        &enc,
        &init,
        &record.future,
        &labels,
        opts,
    );
    let nll = tape.scale(ll, -1.0);
    let mut grads = model.params().zero_grads();
    tape.backward(nll, &mut grads);
    Ok((tape.scalar(nll), grads))
}

/// Loss without gradients, dropout off. Used for validation.
pub fn evaluate_loss(model: &PhaModel, record: &SceneRecord, seed: u64) -> Result<LossBreakdown> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ctx = Ctx {
        train: false,
        dropout: 0.0,
        rng: &mut rng,
    };
    let mut tape = Tape::new(model.params());
    let loss = record_loss(
        model,
        &mut tape,
        &mut ctx,
        record,
        LossOptions {
            train: false,
            ..LossOptions::default()
        },
    )?;
    Ok(loss.breakdown)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Fraction of records held out for early stopping.
    pub val_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            val_fraction: 0.1,
            patience: 5,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidConfig(
                "val_fraction must lie in [0, 1)".into(),
            ));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mle: f64,
    pub coverage: f64,
    pub regularization: f64,
    pub total: f64,
    pub val_total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: PhaModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Prepares records for training: labels are remapped for the variant and
/// every record is validated against the model config.
fn prepare(records: &[SceneRecord], cfg: &ModelConfig) -> Result<Vec<SceneRecord>> {
    records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.future_modes = training_labels(&r, cfg.variant);
            validate_record(r, cfg)
        })
        .collect()
}

pub fn train(
    records: &[SceneRecord],
    config: ModelConfig,
    tc: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    train_with(records, config, tc, seed, |_| {})
}

/// Trains from a fresh initialization, calling `on_epoch` after each epoch.
pub fn train_with(
    records: &[SceneRecord],
    config: ModelConfig,
    tc: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    tc.validate()?;
    let data = prepare(records, &config)?;
    let mut model = PhaModel::new(config, seed)?;

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "split")));
    let n_val = if data.len() >= 2 {
        ((data.len() as f64 * tc.val_fraction).round() as usize).min(data.len() - 1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();

    let mut adam = Adam::new(tc.adam, model.params());
    let mut log = Vec::new();
    let mut best = (f64::INFINITY, model.clone(), 0usize);
    let mut since_best = 0;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "shuffle"));
    let val_seed = derive_seed(seed, "validation");
    let mut step: u64 = 0;

    for epoch in 1..=tc.epochs {
        train_idx.shuffle(&mut shuffle_rng);
        let mut sum = LossBreakdown::default();
        for batch in train_idx.chunks(tc.batch_size) {
            let base = step;
            let results: Vec<Result<(LossBreakdown, Grads)>> = batch
                .par_iter()
                .enumerate()
                .map(|(j, &i)| {
                    let s = derive_indexed(seed, "batch", base * tc.batch_size as u64 + j as u64);
                    loss_and_grads(&model, &data[i], LossOptions::default(), s)
                })
                .collect();
            let mut grads = model.params().zero_grads();
            for r in results {
                let (b, g) = r?;
                sum.add(&b);
                grads.add_assign(&g);
            }
            grads.scale(1.0 / batch.len() as f64);
            if grads.is_finite() {
                adam.step(model.params_mut(), &grads);
            } else {
                log::warn!("skipping batch with non-finite gradient at epoch {epoch}");
            }
            step += 1;
        }
        let train_mean = sum.scaled(1.0 / train_idx.len().max(1) as f64);

        let val_total = if val_idx.is_empty() {
            train_mean.total
        } else {
            let vals: Vec<Result<LossBreakdown>> = val_idx
                .par_iter()
                .map(|&i| {
                    evaluate_loss(
                        &model,
                        &data[i],
                        derive_indexed(val_seed, "record", i as u64),
                    )
                })
                .collect();
            let mut t = 0.0;
            for v in vals {
                t += v?.total;
            }
            t / val_idx.len() as f64
        };

        let entry = EpochLog {
            epoch,
            mle: train_mean.mle,
            coverage: train_mean.coverage,
            regularization: train_mean.regularization,
            total: train_mean.total,
            val_total,
        };
        log::info!(
            "epoch {epoch}: total {:.4} mle {:.4} coverage {:.4} reg {:.4} val {:.4}",
            entry.total,
            entry.mle,
            entry.coverage,
            entry.regularization,
            entry.val_total
        );
        on_epoch(&entry);
        log.push(entry);

        if val_total < best.0 {
            best = (val_total, model.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= tc.patience {
                break;
            }
        }
    }

    let (_, model, best_epoch) = if best.0.is_finite() {
        best
    } else {
        (0.0, model, log.len())
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
    })
}
