use std::path::{Path, PathBuf};

use drr_core::augment::Strategy;
use drr_core::eval::{MetricSpace, SsimWindow};
use drr_core::field_data::GeneratorSpec;
use drr_core::model::ModelConfig;
use drr_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::args::Task;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionPlan {
    /// Explicit raw conditions; otherwise `count` uniform draws in `[0, 1]`.
    #[serde(default)]
    pub list: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub count: usize,
    #[serde(default)]
    pub test: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub generator: GeneratorSpec,
    pub conditions: ConditionPlan,
    #[serde(default)]
    pub condition_names: Vec<String>,
    #[serde(default)]
    pub log_transform: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub dataset: PathBuf,
    #[serde(default = "cond")]
    pub task: Task,
    /// Stride for the spatio-conditional task; defaults to 2 there.
    #[serde(default)]
    pub downsample: Option<usize>,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn cond() -> Task {
    Task::Cond
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "hundred")]
    pub n_conditions: usize,
    #[serde(default = "thousand")]
    pub n_coords: usize,
    #[serde(default = "runs")]
    pub runs: usize,
}

fn hundred() -> usize {
    100
}

fn thousand() -> usize {
    1000
}

fn runs() -> usize {
    101
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalFile {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    #[serde(default = "cond")]
    pub task: Task,
    #[serde(default = "two")]
    pub factor: usize,
    #[serde(default)]
    pub metric_space: MetricSpace,
    #[serde(default)]
    pub window: Option<SsimWindow>,
    /// Write reconstructions as field files.
    #[serde(default)]
    pub dump: bool,
    #[serde(default)]
    pub benchmark: Option<BenchConfig>,
}

fn two() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    pub dataset: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub variant: Strategy,
    pub taus: Vec<f64>,
    #[serde(default = "seeds")]
    pub seeds: Vec<u64>,
}

fn seeds() -> Vec<u64> {
    vec![0]
}

/// Relative paths in a config are taken from the config file's directory.
pub fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
    match base.and_then(Path::parent) {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}
