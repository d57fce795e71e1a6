use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOG_EPS: f64 = 1e-8;

/// Frozen normalization ranges. Values use train members only (after the
/// optional log transform); conditions span every member.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub value_min: Vec<f64>,
    pub value_max: Vec<f64>,
    pub cond_min: Vec<f64>,
    pub cond_max: Vec<f64>,
    pub log_transform: bool,
}

impl NormStats {
    pub fn validate(&self) -> Result<()> {
        for (k, (lo, hi)) in self.value_min.iter().zip(&self.value_max).enumerate() {
            if !(lo < hi) {
                return Err(Error::Data(format!("value channel {k} has a degenerate range [{lo}, {hi}]")));
            }
        }
        for (k, (lo, hi)) in self.cond_min.iter().zip(&self.cond_max).enumerate() {
            if !(lo < hi) {
                return Err(Error::Data(format!("condition parameter {k} has a degenerate range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn value_channels(&self) -> usize {
        self.value_min.len()
    }

    fn forward_value(&self, v: f64) -> f64 {
        if self.log_transform {
            (v + LOG_EPS).ln()
        } else {
            v
        }
    }

    /// Raw value of channel `k` to `[0, 1]`.
    pub fn normalize_value(&self, v: f64, k: usize) -> f64 {
        (self.forward_value(v) - self.value_min[k]) / (self.value_max[k] - self.value_min[k])
    }

    pub fn denormalize_value(&self, v: f64, k: usize) -> f64 {
        let t = v * (self.value_max[k] - self.value_min[k]) + self.value_min[k];
        if self.log_transform {
            t.exp() - LOG_EPS
        } else {
            t
        }
    }

    pub fn normalize_condition(&self, c: &[f64]) -> Vec<f64> {
        c.iter()
            .enumerate()
            .map(|(k, &v)| (v - self.cond_min[k]) / (self.cond_max[k] - self.cond_min[k]))
            .collect()
    }

    pub fn denormalize_condition(&self, c: &[f64]) -> Vec<f64> {
        c.iter()
            .enumerate()
            .map(|(k, &v)| v * (self.cond_max[k] - self.cond_min[k]) + self.cond_min[k])
            .collect()
    }

    /// Clamps a raw condition into the declared range; also reports whether it moved.
    pub fn clamp_condition(&self, c: &[f64]) -> (Vec<f64>, bool) {
        let out: Vec<f64> = c
            .iter()
            .enumerate()
            .map(|(k, &v)| v.clamp(self.cond_min[k], self.cond_max[k]))
            .collect();
        let moved = out.iter().zip(c).any(|(a, b)| a != b);
        (out, moved)
    }
}

/// Lattice index to `[-1, 1]` on an `r`-vertex axis.
pub fn index_to_coord(i: usize, r: usize) -> f64 {
    crate::embedding::lattice_coord(i, r)
}
