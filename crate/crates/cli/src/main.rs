use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use phapred::config::RunConfig;
use phapred::data::{
    generate_with, label_future, perturb_labels, read_dataset, read_dataset_with_meta,
    smooth_trajectory, write_dataset_with_meta, write_jsonl, ScenarioMix,
};
use phapred::eval::{render_scene_svg, render_table, run_ablation, LabeledModel, Protocol};
use phapred::model::{load_checkpoint, save_checkpoint, PhaModel};
use phapred::seed::derive_seed;
use phapred::select::{predict_scene, PredictOptions, SelectionMethod, SelectionResult};
use phapred::train::train_with;
use phapred::{SceneRecord, Variant};

#[derive(Parser)]
#[command(
    name = "phapred",
    version,
    about = "Hybrid-automaton trajectory prediction"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set model.hidden_size=16`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset.
    Generate {
        #[arg(long)]
        count: Option<usize>,
        /// Scenario proportions, e.g. `lane_follow=0.5,turn_after_follow=0.5`.
        #[arg(long)]
        mix: Option<String>,
        #[arg(long)]
        noise_std: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute future mode labels from positions.
    Label {
        #[arg(long)]
        data: PathBuf,
        /// Smooth each track with the GP smoother before labeling.
        #[arg(long)]
        smooth: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replace a fraction of mode labels with random other modes.
    Perturb {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_checkpoint: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        variant: Option<Variant>,
        /// Epoch log; defaults to the checkpoint path with `.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Generate and select predictions for every scene.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "M")]
        m: Option<usize>,
        #[arg(long = "N")]
        n: Option<usize>,
        #[arg(long, default_value = "fps")]
        method: SelectionMethod,
        #[arg(long)]
        nms_threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an evaluation protocol.
    Eval {
        /// Model checkpoint as `path` or `label=path`; repeatable.
        #[arg(long, required = true)]
        checkpoint: Vec<String>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "full")]
        protocol: Protocol,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
        /// Scenes to render as SVG with the full model.
        #[arg(long, default_value_t = 4)]
        plots: usize,
    },
    /// Render predictions for one scene as SVG.
    Plot {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Scene id; defaults to the first scene.
        #[arg(long)]
        scene: Option<String>,
        #[arg(long = "M")]
        m: Option<usize>,
        #[arg(long = "N")]
        n: Option<usize>,
        #[arg(long, default_value = "fps")]
        method: SelectionMethod,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    for o in &common.overrides {
        let (k, v) = o
            .split_once('=')
            .with_context(|| format!("override `{o}` is not KEY=VALUE"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn set(cfg: &mut RunConfig, key: &str, value: Option<impl ToString>) -> Result<()> {
    if let Some(v) = value {
        cfg.set(key, &v.to_string())?;
    }
    Ok(())
}

fn meta(cfg: &RunConfig, command: &str, extra: Value) -> Value {
    json!({ "command": command, "seed": cfg.seed, "config": cfg.to_json(), "args": extra })
}

fn read_scenes(path: &Path) -> Result<Vec<SceneRecord>> {
    let records = read_dataset(path)?;
    if records.is_empty() {
        bail!("{}: dataset is empty", path.display());
    }
    Ok(records)
}

fn load_model(path: &Path) -> Result<PhaModel> {
    Ok(load_checkpoint(path)?.0)
}

fn predictions_json(record: &SceneRecord, sel: &SelectionResult) -> Value {
    let preds: Vec<Value> = sel
        .selected
        .iter()
        .zip(&sel.probabilities)
        .map(|(s, p)| {
            json!({
                "modes": s.modes(),
                "positions": s.positions(),
                "log_likelihood": s.ll(),
                "probability": p,
            })
        })
        .collect();
    json!({ "scene_id": record.scene_id, "predictions": preds })
}

fn predict_opts(cfg: &RunConfig, method: SelectionMethod, seed: u64) -> PredictOptions {
    PredictOptions {
        num_samples: cfg.model.num_samples,
        num_selected: cfg.model.num_selected,
        method,
        nms_threshold: cfg.eval.nms_threshold,
        seed,
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve(&cli.common)?;
    match cli.command {
        Command::Generate {
            count,
            mix,
            noise_std,
            out,
        } => {
            set(&mut cfg, "data.count", count)?;
            set(&mut cfg, "data.mix", mix.map(|m| format!("{m:?}")))?;
            set(&mut cfg, "data.noise_std", noise_std)?;
            let mix: ScenarioMix = cfg.data.mix.parse()?;
            let records = generate_with(
                cfg.data.count,
                derive_seed(cfg.seed, "data"),
                &mix,
                &cfg.generator(),
            )?;
            write_dataset_with_meta(&records, &out, Some(&meta(&cfg, "generate", json!({}))))?;
            log::info!("wrote {} scenes to {}", records.len(), out.display());
        }
        Command::Label { data, smooth, out } => {
            let mut records = read_dataset(&data)?;
            for r in &mut records {
                let (obs, fut) = if smooth {
                    let mut joined = r.observed.clone();
                    joined.extend_from_slice(&r.future);
                    let s = smooth_trajectory(&joined, &cfg.smoother)?;
                    let (o, f) = s.split_at(r.observed.len());
                    (o.to_vec(), f.to_vec())
                } else {
                    (r.observed.clone(), r.future.clone())
                };
                r.future_modes = label_future(&obs, &fut, &cfg.labels)?;
            }
            write_dataset_with_meta(
                &records,
                &out,
                Some(&meta(&cfg, "label", json!({ "smooth": smooth }))),
            )?;
        }
        Command::Perturb {
            data,
            fraction,
            out,
        } => {
            let records = read_dataset(&data)?;
            let perturbed = perturb_labels(
                &records,
                fraction,
                derive_seed(cfg.seed, "perturb"),
                cfg.model.vocab_size,
            )?;
            write_dataset_with_meta(
                &perturbed,
                &out,
                Some(&meta(&cfg, "perturb", json!({ "fraction": fraction }))),
            )?;
        }
        Command::Train {
            data,
            out_checkpoint,
            epochs,
            variant,
            log,
        } => {
            set(&mut cfg, "train.epochs", epochs)?;
            if let Some(v) = variant {
                cfg.model = cfg.model.clone().with_variant(v);
            }
            cfg.validate()?;
            let records = read_scenes(&data)?;
            let log_path = log.unwrap_or_else(|| out_checkpoint.with_extension("log.jsonl"));
            let mut entries = Vec::new();
            let outcome = train_with(&records, cfg.model.clone(), &cfg.train, cfg.seed, |e| {
                log::info!(
                    "epoch {}: total {:.4} val {:.4}",
                    e.epoch,
                    e.total,
                    e.val_total
                );
                entries.push(*e);
            })?;
            let m = meta(
                &cfg,
                "train",
                json!({ "data": data, "best_epoch": outcome.best_epoch, "epochs_run": outcome.log.len() }),
            );
            save_checkpoint(&outcome.model, m.clone(), &out_checkpoint)?;
            write_jsonl(&log_path, Some(&m), &entries)?;
        }
        Command::Sample {
            checkpoint,
            data,
            m,
            n,
            method,
            nms_threshold,
            out,
        } => {
            set(&mut cfg, "model.num_samples", m)?;
            set(&mut cfg, "model.num_selected", n)?;
            set(&mut cfg, "eval.nms_threshold", nms_threshold)?;
            let model = load_model(&checkpoint)?;
            let records = read_scenes(&data)?;
            let popts = predict_opts(&cfg, method, derive_seed(cfg.seed, "sample"));
            let mut rows = Vec::with_capacity(records.len());
            for (i, r) in records.iter().enumerate() {
                let r = phapred::validate_record(r.clone(), model.config())?;
                let sel = predict_scene(&model, &r, i, &popts)?;
                rows.push(predictions_json(&r, &sel));
            }
            let extra =
                json!({ "checkpoint": checkpoint, "data": data, "method": method.as_str() });
            write_jsonl(&out, Some(&meta(&cfg, "sample", extra)), &rows)?;
        }
        Command::Eval {
            checkpoint,
            data,
            protocol,
            out_dir,
            runs,
            plots,
        } => {
            set(&mut cfg, "eval.runs", runs)?;
            let (records, _) = read_dataset_with_meta(&data)?;
            if records.is_empty() {
                bail!("{}: dataset is empty", data.display());
            }
            let mut models = Vec::new();
            for arg in &checkpoint {
                let (label, path) = match arg.split_once('=') {
                    Some((l, p)) => (Some(l.to_string()), PathBuf::from(p)),
                    None => (None, PathBuf::from(arg)),
                };
                if !path.exists() {
                    bail!("missing checkpoint `{}`", path.display());
                }
                let model = load_model(&path)?;
                let label = label.unwrap_or_else(|| model.config().variant.as_str().to_string());
                models.push(LabeledModel::new(label, model));
            }
            let opts = cfg.ablation();
            let reports = run_ablation(&records, &models, protocol, &opts)?;
            fs::create_dir_all(&out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))?;
            let extra =
                json!({ "checkpoints": checkpoint, "data": data, "protocol": protocol.as_str() });
            let m = meta(&cfg, "eval", extra);
            write_jsonl(out_dir.join("report.jsonl"), Some(&m), &reports)?;
            fs::write(out_dir.join("tables.md"), render_table(&reports))?;
            if let Some(full) = models
                .iter()
                .find(|lm| lm.model.config().variant == Variant::Full)
                .or(models.first())
            {
                let dir = out_dir.join("plots");
                fs::create_dir_all(&dir)?;
                let popts = predict_opts(&cfg, SelectionMethod::Fps, opts.seed);
                for (i, r) in records.iter().take(plots).enumerate() {
                    let sel = predict_scene(&full.model, r, i, &popts)?;
                    fs::write(
                        dir.join(format!("{}.svg", r.scene_id)),
                        render_scene_svg(r, &sel.selected),
                    )?;
                }
            }
            print!("{}", render_table(&reports));
        }
        Command::Plot {
            checkpoint,
            data,
            scene,
            m,
            n,
            method,
            out,
        } => {
            set(&mut cfg, "model.num_samples", m)?;
            set(&mut cfg, "model.num_selected", n)?;
            let model = load_model(&checkpoint)?;
            let records = read_scenes(&data)?;
            let (i, r) = match &scene {
                Some(id) => records
                    .iter()
                    .enumerate()
                    .find(|(_, r)| &r.scene_id == id)
                    .with_context(|| format!("scene `{id}` not found"))?,
                None => (0, &records[0]),
            };
            let popts = predict_opts(&cfg, method, derive_seed(cfg.seed, "sample"));
            let sel = predict_scene(&model, r, i, &popts)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(&out, render_scene_svg(r, &sel.selected))
                .with_context(|| format!("writing {}", out.display()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
