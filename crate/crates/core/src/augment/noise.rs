use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_TRIES: usize = 1000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Truncation {
    #[default]
    Radial,
    PerComponent,
}

/// Zero-mean Gaussian with std `sigma` (default `tau / 3`), truncated at `tau`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub tau: f64,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub mode: Truncation,
}

impl NoiseSpec {
    pub fn radial(tau: f64) -> Self {
        Self {
            tau,
            sigma: None,
            mode: Truncation::Radial,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or(self.tau / 3.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.sigma() > 0.0) {
            return Err(Error::Config(format!(
                "noise needs tau > 0 and sigma > 0, got tau {} sigma {}",
                self.tau,
                self.sigma()
            )));
        }
        Ok(())
    }

    fn inside(&self, e: &[f64]) -> bool {
        match self.mode {
            Truncation::Radial => e.iter().map(|v| v * v).sum::<f64>().sqrt() <= self.tau,
            Truncation::PerComponent => e.iter().all(|v| v.abs() <= self.tau),
        }
    }
}

/// Rejection-samples until the draw is inside the truncation region; after
/// [`MAX_TRIES`] the last draw is scaled onto the boundary.
pub fn truncated_gauss<R: Rng + ?Sized>(spec: &NoiseSpec, dim: usize, rng: &mut R) -> Vec<f64> {
    let sigma = spec.sigma();
    let mut e = vec![0.0; dim];
    for _ in 0..MAX_TRIES {
        for v in e.iter_mut() {
            *v = sigma * rng.sample::<f64, _>(StandardNormal);
        }
        if spec.inside(&e) {
            return e;
        }
    }
    log::warn!("truncated gaussian rejected {MAX_TRIES} draws (tau {}, sigma {sigma}); scaling onto the boundary", spec.tau);
    let size = match spec.mode {
        Truncation::Radial => e.iter().map(|v| v * v).sum::<f64>().sqrt(),
        Truncation::PerComponent => e.iter().fold(0.0f64, |m, v| m.max(v.abs())),
    };
    let s = spec.tau / size;
    e.iter_mut().for_each(|v| *v *= s);
    e
}
