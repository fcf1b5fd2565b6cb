//! Run configuration: defaults, TOML files and dotted-key overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{GeneratorConfig, LabelThresholds, SmootherConfig};
use crate::error::{Error, Result};
use crate::eval::AblationOptions;
use crate::seed::derive_seed;
use crate::train::TrainConfig;
use crate::types::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub count: usize,
    /// Scenario proportions as `kind=p,kind=p`.
    pub mix: String,
    pub noise_std: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            count: 1000,
            mix: "lane_follow=0.25,lane_change_mid_horizon=0.25,turn_after_follow=0.25,decelerate_to_stop=0.25".into(),
            noise_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub runs: usize,
    pub nms_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            runs: 5,
            nms_threshold: 2.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub labels: LabelThresholds,
    pub smoother: SmootherConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(one_line(&e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML file, or returns the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_toml_str(&text).map_err(|e| match e {
                    Error::Config(m) => Error::Config(format!("{}: {m}", p.display())),
                    other => other,
                })
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.labels.validate()?;
        self.smoother.validate()?;
        self.train.validate()?;
        if self.eval.runs == 0 {
            return Err(Error::InvalidConfig("eval.runs must be positive".into()));
        }
        Ok(())
    }

    /// Sets one value by dotted key, e.g. `model.num_samples = "30"`. The
    /// value is parsed as a TOML literal, falling back to a string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));

        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts
            .pop()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::Config(format!("empty key `{key}`")))?;
        let mut node = &mut root;
        for p in parts {
            node = node
                .as_table_mut()
                .and_then(|t| t.get_mut(p))
                .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
        }
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
        if !table.contains_key(last) && !Self::optional_key(key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        table.insert(last.to_string(), parsed);
        let mut next: RunConfig = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("`{key}`: {}", e.message())))?;
        if key == "model.variant" {
            let v = next.model.variant;
            next.model = next.model.with_variant(v);
        }
        next.validate()?;
        *self = next;
        Ok(())
    }

    /// Keys that serialize to nothing while unset.
    fn optional_key(key: &str) -> bool {
        matches!(key, "paths.data" | "paths.checkpoint" | "paths.out")
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            obs_horizon: self.model.obs_horizon,
            horizon: self.model.horizon,
            noise_std: self.data.noise_std,
            thresholds: self.labels,
            smoother: self.smoother,
        }
    }

    pub fn ablation(&self) -> AblationOptions {
        AblationOptions {
            seed: derive_seed(self.seed, "evaluation"),
            runs: self.eval.runs,
            nms_threshold: self.eval.nms_threshold,
            num_selected: self.model.num_selected,
            num_samples: self.model.num_samples,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Flattens a TOML error into one line that keeps the offending source line.
fn one_line(e: &toml::de::Error) -> String {
    let text = e.to_string();
    let parts: Vec<&str> = text
        .lines()
        .map(|l| {
            l.trim_start_matches(|c: char| c.is_ascii_digit() || c == ' ' || c == '|')
                .trim()
        })
        .filter(|l| !l.is_empty() && !l.chars().all(|c| c == '^'))
        .collect();
    parts.join(": ")
}
