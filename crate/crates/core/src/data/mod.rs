//! Synthetic scene generation, smoothing, labeling, label corruption and
//! dataset persistence.

pub mod io;
pub mod label;
pub mod perturb;
pub mod smooth;
pub mod synth;

pub use io::{
    read_dataset, read_dataset_with_meta, write_dataset, write_dataset_with_meta, write_jsonl,
};
pub use label::{auto_label, initial_mode, label_future, LabelThresholds, STEP_SECONDS};
pub use perturb::perturb_labels;
pub use smooth::{smooth_trajectory, MaternNu, SmootherConfig};
pub use synth::{generate_synthetic, generate_with, GeneratorConfig, ScenarioKind, ScenarioMix};
