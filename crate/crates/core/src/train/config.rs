use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::field_data::{SamplerConfig, DEFAULT_BINS};

/// Importance switches; batch sizes live on [`TrainConfig`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    #[serde(default)]
    pub member_importance: bool,
    #[serde(default)]
    pub coord_importance: bool,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
}

fn default_bins() -> usize {
    DEFAULT_BINS
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            member_importance: false,
            coord_importance: false,
            histogram_bins: DEFAULT_BINS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "one")]
    pub epochs: usize,
    pub n_c: usize,
    pub n_x: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_floor")]
    pub lr_floor_ratio: f64,
    #[serde(default)]
    pub seed: u64,
    /// Hard cap on the step count derived from `epochs`.
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub sampler: SamplingConfig,
    /// Held-out evaluation period in steps; 0 disables.
    #[serde(default)]
    pub eval_every: usize,
    /// Last-good checkpoint period in steps; 0 disables.
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Global gradient-norm clip; off when absent.
    #[serde(default)]
    pub grad_clip: Option<f64>,
}

fn one() -> usize {
    1
}

fn default_lr() -> f64 {
    1e-4
}

fn default_floor() -> f64 {
    0.01
}

impl TrainConfig {
    pub fn new(epochs: usize, n_c: usize, n_x: usize, seed: u64) -> Self {
        Self {
            epochs,
            n_c,
            n_x,
            lr: default_lr(),
            lr_floor_ratio: default_floor(),
            seed,
            max_steps: None,
            augment: AugmentConfig::default(),
            sampler: SamplingConfig::default(),
            eval_every: 0,
            checkpoint_every: 0,
            grad_clip: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.lr_floor_ratio) {
            return Err(Error::Config(format!("lr_floor_ratio {} outside [0, 1]", self.lr_floor_ratio)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        self.sampler_config().validate()?;
        self.augment.validate()
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            n_c: self.n_c,
            n_x: self.n_x,
            member_importance: self.sampler.member_importance,
            coord_importance: self.sampler.coord_importance,
            histogram_bins: self.sampler.histogram_bins,
            seed: self.seed,
        }
    }

    /// `ceil(train members × vertices / (n_c · n_x))`.
    pub fn steps_per_epoch(&self, train_members: usize, vertices: usize) -> usize {
        (train_members * vertices).div_ceil(self.n_c * self.n_x)
    }

    pub fn total_steps(&self, train_members: usize, vertices: usize) -> usize {
        let t = self.epochs * self.steps_per_epoch(train_members, vertices);
        self.max_steps.map_or(t, |m| m.min(t))
    }
}
