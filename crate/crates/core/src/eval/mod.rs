//! Metrics, experiment protocols and rendering.

pub mod ablation;
pub mod metrics;
pub mod plot;

pub use ablation::{
    evaluate_cells, render_table, run_ablation, scene_samples, AblationOptions, Cell, EvalReport,
    LabeledModel, Protocol,
};
pub use metrics::{min_ade_fde, min_der, nll, ONE_SECOND, THREE_SECONDS};
pub use plot::render_scene_svg;
