//! Experiment protocols over trained models: generation, selection and
//! aggregated metrics.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{min_ade_fde, min_der, nll, ONE_SECOND};
use crate::error::{Error, Result};
use crate::model::PhaModel;
use crate::seed::derive_indexed;
use crate::select::{generate_samples, select, SampleSet, SelectionMethod};
use crate::types::{HybridSequence, SceneRecord, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Transition sampling vs non-adaptive vs adaptive proposal, M = N = 6.
    Table1,
    /// Selection methods for M in {6, 30, 50}, N = 6, on the full model.
    Table2,
    /// Full model vs fixed-mode baseline, min-of-5.
    Table4,
    /// Everything above plus one FPS row per supplied model.
    Full,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [Self::Table1, Self::Table2, Self::Table4, Self::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Table1 => "table1",
            Self::Table2 => "table2",
            Self::Table4 => "table4",
            Self::Full => "full",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown protocol `{s}`")))
    }
}

/// A trained model and the name it is reported under.
#[derive(Debug, Clone)]
pub struct LabeledModel {
    pub label: String,
    pub model: PhaModel,
}

impl LabeledModel {
    pub fn new(label: impl Into<String>, model: PhaModel) -> Self {
        Self {
            label: label.into(),
            model,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationOptions {
    pub seed: u64,
    /// Repetitions averaged per row.
    pub runs: usize,
    pub nms_threshold: f64,
    /// N for the selection-method and per-model rows.
    pub num_selected: usize,
    /// Largest M in the selection-method sweep and for the per-model rows.
    pub num_samples: usize,
}

impl Default for AblationOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            runs: 5,
            nms_threshold: 2.0,
            num_selected: 6,
            num_samples: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    pub model: String,
    pub method: String,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub n_scenes: usize,
    pub n_runs: usize,
    /// Steps in the short cut (1 s at 10 Hz).
    pub short_horizon: usize,
    pub min_ade_short: f64,
    pub min_fde_short: f64,
    /// Steps in the full cut (3 s at 10 Hz by default).
    pub horizon: usize,
    pub min_ade: f64,
    pub min_fde: f64,
    pub min_der: f64,
    pub nll: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Metrics {
    ade_short: f64,
    fde_short: f64,
    ade: f64,
    fde: f64,
    der: f64,
    nll: f64,
}

impl Metrics {
    fn add(&mut self, o: &Metrics) {
        self.ade_short += o.ade_short;
        self.fde_short += o.fde_short;
        self.ade += o.ade;
        self.fde += o.fde;
        self.der += o.der;
        self.nll += o.nll;
    }

    fn scale(&mut self, k: f64) {
        self.ade_short *= k;
        self.fde_short *= k;
        self.ade *= k;
        self.fde *= k;
        self.der *= k;
        self.nll *= k;
    }
}

/// One selector applied to the sample sets of one model.
#[derive(Debug, Clone, Copy)]
pub struct Cell {
    pub method: SelectionMethod,
    pub n: usize,
}

/// Generates `m` samples per scene. Scene `i` in run `run` always uses the
/// same random stream.
pub fn scene_samples(
    model: &PhaModel,
    records: &[SceneRecord],
    m: usize,
    seed: u64,
    run: usize,
) -> Result<Vec<SampleSet>> {
    let run_seed = derive_indexed(seed, "eval-run", run as u64);
    records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(run_seed, "scene", i as u64));
            generate_samples(model, r, m, &mut rng)
        })
        .collect()
}

fn scene_metrics(
    record: &SceneRecord,
    set: &SampleSet,
    cell: Cell,
    nms_threshold: f64,
    rng_seed: u64,
) -> Result<Metrics> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let sel = select(set, cell.n, cell.method, nms_threshold, &mut rng)?;
    let positions: Vec<_> = sel.selected.iter().map(HybridSequence::positions).collect();
    let modes: Vec<_> = sel.selected.iter().map(HybridSequence::modes).collect();
    let h = record.future.len();
    let short = ONE_SECOND.min(h);
    let (ade_short, fde_short) = min_ade_fde(&positions, &record.future, short)?;
    let (ade, fde) = min_ade_fde(&positions, &record.future, h)?;
    Ok(Metrics {
        ade_short,
        fde_short,
        ade,
        fde,
        der: min_der(&modes, &record.future_modes)?,
        nll: nll(&sel, &record.future)?,
    })
}

/// Evaluates several selectors on shared sample sets, averaging over runs.
pub fn evaluate_cells(
    model: &LabeledModel,
    records: &[SceneRecord],
    m: usize,
    cells: &[Cell],
    protocol: &str,
    opts: &AblationOptions,
) -> Result<Vec<EvalReport>> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sums = vec![Metrics::default(); cells.len()];
    for run in 0..opts.runs {
        let sets = scene_samples(&model.model, records, m, opts.seed, run)?;
        let sel_seed = derive_indexed(opts.seed, "eval-select", run as u64);
        for (c, cell) in cells.iter().enumerate() {
            let per_scene: Vec<Result<Metrics>> = records
                .par_iter()
                .zip(&sets)
                .enumerate()
                .map(|(i, (r, s))| {
                    scene_metrics(
                        r,
                        s,
                        *cell,
                        opts.nms_threshold,
                        derive_indexed(sel_seed, "scene", i as u64),
                    )
                })
                .collect();
            let mut run_sum = Metrics::default();
            for s in per_scene {
                run_sum.add(&s?);
            }
            run_sum.scale(1.0 / records.len() as f64);
            sums[c].add(&run_sum);
        }
    }
    let h = records[0].future.len();
    Ok(cells
        .iter()
        .zip(sums)
        .map(|(cell, mut s)| {
            s.scale(1.0 / opts.runs as f64);
            EvalReport {
                protocol: protocol.to_string(),
                model: model.label.clone(),
                method: cell.method.to_string(),
                m,
                n: cell.n,
                n_scenes: records.len(),
                n_runs: opts.runs,
                short_horizon: ONE_SECOND.min(h),
                min_ade_short: s.ade_short,
                min_fde_short: s.fde_short,
                horizon: h,
                min_ade: s.ade,
                min_fde: s.fde,
                min_der: s.der,
                nll: s.nll,
            }
        })
        .collect())
}

fn find(models: &[LabeledModel], variant: Variant) -> Result<&LabeledModel> {
    models
        .iter()
        .find(|m| m.label == variant.as_str())
        .or_else(|| models.iter().find(|m| m.model.config().variant == variant))
        .ok_or_else(|| Error::MissingCheckpoint(variant.as_str().to_string()))
}

fn table1(
    records: &[SceneRecord],
    models: &[LabeledModel],
    opts: &AblationOptions,
) -> Result<Vec<EvalReport>> {
    let mut out = Vec::new();
    for (variant, label) in [
        (Variant::TransitionOnly, "transition"),
        (Variant::NonadaptiveProposal, "proposal_nonadaptive"),
        (Variant::Full, "proposal_adaptive"),
    ] {
        let lm = find(models, variant)?;
        let cell = Cell {
            method: SelectionMethod::Fps,
            n: 6,
        };
        let mut rows = evaluate_cells(lm, records, 6, &[cell], "table1", opts)?;
        rows[0].method = label.to_string();
        out.append(&mut rows);
    }
    Ok(out)
}

fn table2(
    records: &[SceneRecord],
    models: &[LabeledModel],
    opts: &AblationOptions,
) -> Result<Vec<EvalReport>> {
    let lm = find(models, Variant::Full)?;
    let n = opts.num_selected;
    let cells: Vec<Cell> = SelectionMethod::ALL
        .iter()
        .map(|&method| Cell { method, n })
        .collect();
    let mut out = Vec::new();
    let mut sizes = vec![n, 30, opts.num_samples];
    sizes.retain(|&m| m >= n && m <= opts.num_samples.max(n));
    sizes.sort_unstable();
    sizes.dedup();
    for m in sizes {
        out.extend(evaluate_cells(lm, records, m, &cells, "table2", opts)?);
    }
    Ok(out)
}

fn table4(
    records: &[SceneRecord],
    models: &[LabeledModel],
    opts: &AblationOptions,
) -> Result<Vec<EvalReport>> {
    let full = find(models, Variant::Full)?;
    let base = find(models, Variant::FixedModeBaseline)?;
    let z = base.model.config().vocab_size;
    let fps = Cell {
        method: SelectionMethod::Fps,
        n: z,
    };
    let mut out = evaluate_cells(
        full,
        records,
        opts.num_samples.max(z),
        &[fps],
        "table4",
        opts,
    )?;
    // One sample per mode; nothing to select.
    out.extend(evaluate_cells(base, records, z, &[fps], "table4", opts)?);
    Ok(out)
}

/// Runs a protocol and returns one report per (model, method, M, N) cell.
pub fn run_ablation(
    records: &[SceneRecord],
    models: &[LabeledModel],
    protocol: Protocol,
    opts: &AblationOptions,
) -> Result<Vec<EvalReport>> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if opts.runs == 0 {
        return Err(Error::InvalidConfig("runs must be positive".into()));
    }
    match protocol {
        Protocol::Table1 => table1(records, models, opts),
        Protocol::Table2 => table2(records, models, opts),
        Protocol::Table4 => table4(records, models, opts),
        Protocol::Full => {
            let mut out = Vec::new();
            let has = |v| find(models, v).is_ok();
            if has(Variant::TransitionOnly)
                && has(Variant::NonadaptiveProposal)
                && has(Variant::Full)
            {
                out.extend(table1(records, models, opts)?);
            }
            out.extend(table2(records, models, opts)?);
            let cell = Cell {
                method: SelectionMethod::Fps,
                n: opts.num_selected,
            };
            for lm in models {
                out.extend(evaluate_cells(
                    lm,
                    records,
                    opts.num_samples,
                    &[cell],
                    "table3",
                    opts,
                )?);
            }
            if has(Variant::FixedModeBaseline) {
                out.extend(table4(records, models, opts)?);
            }
            Ok(out)
        }
    }
}

/// Markdown rendering of report rows.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut s = String::from(
        "| protocol | model | method | M | N | minADE@1s | minFDE@1s | minADE | minFDE | minDER | NLL |\n\
         |---|---|---|---|---|---|---|---|---|---|---|\n",
    );
    for r in reports {
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {:.2} |\n",
            r.protocol,
            r.model,
            r.method,
            r.m,
            r.n,
            r.min_ade_short,
            r.min_fde_short,
            r.min_ade,
            r.min_fde,
            r.min_der,
            r.nll
        ));
    }
    s
}
