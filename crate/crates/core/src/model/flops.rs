use serde::{Deserialize, Serialize};

use crate::model::config::ModelConfig;

/// Which inference path a FLOP estimate describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    /// Interpolation of cached refined structures plus the decoder.
    Baked,
    /// Unification, lift and refinement of every corner of every query.
    PerQuery,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopReport {
    pub per_point: f64,
    /// Trillions of operations per 10⁹ queried points.
    pub tflops_per_1e9_points: f64,
}

impl FlopReport {
    fn from_per_point(per_point: f64) -> Self {
        Self {
            per_point,
            tflops_per_1e9_points: per_point * 1e9 / 1e12,
        }
    }
}

fn linear(din: usize, dout: usize) -> f64 {
    2.0 * din as f64 * dout as f64
}

/// Multilinear interpolation of `channels` values on a rank-`d` lattice.
fn interp(d: usize, channels: usize) -> f64 {
    (1u64 << d) as f64 * (d + channels) as f64 * 2.0
}

fn block(width: usize, hidden: usize) -> f64 {
    4.0 * width as f64 + 2.0 * linear(width, hidden) + 2.0 * hidden as f64 + linear(hidden, width) + width as f64
}

fn decoder(cfg: &ModelConfig) -> f64 {
    let d = &cfg.decoder;
    (0..d.layers)
        .map(|i| {
            let a = if i == 0 { cfg.decoder_in() } else { d.hidden };
            let b = if i + 1 == d.layers { d.out_dim } else { d.hidden };
            linear(a, b)
        })
        .sum()
}

/// Cost of producing one refined unified vertex from the base structures.
fn spatial_vertex(cfg: &ModelConfig) -> f64 {
    let s = &cfg.spatial;
    let base = s.levels.len() * s.channels;
    let unify = s.levels.len() as f64 * interp(s.dim, s.channels);
    let lift = cfg.spatial_pe().map_or(0.0, |k| 4.0 * (base * k) as f64);
    let w = cfg.spatial_width();
    let refine = if cfg.flags.spatial_refiner {
        s.refiner.depth as f64 * block(w, s.refiner.hidden(w))
    } else {
        0.0
    };
    unify + lift + refine
}

fn condition_vertex(cfg: &ModelConfig) -> f64 {
    let Some(c) = &cfg.condition else { return 0.0 };
    let base = c.params * c.levels.len() * c.channels;
    // two local vertices, each a two-tap line sample
    let unify = 8.0 * base as f64;
    let lift = cfg.condition_pe().map_or(0.0, |k| 4.0 * (base * k) as f64);
    let w = cfg.condition_width();
    let refine = if cfg.flags.condition_refiner {
        c.refiner.depth as f64 * block(w, c.refiner.hidden(w))
    } else {
        0.0
    };
    unify + lift + refine
}

/// Analytic operation count per queried point.
pub fn estimate_flops(cfg: &ModelConfig, mode: QueryMode) -> FlopReport {
    let d = cfg.dim_x();
    let dc = cfg.dim_c();
    let mut per_point = interp(d, cfg.spatial_width()) + decoder(cfg);
    if dc > 0 {
        per_point += dc as f64 * interp(1, cfg.condition_width() / dc);
    }
    if mode == QueryMode::PerQuery {
        per_point += (1u64 << d) as f64 * spatial_vertex(cfg);
        per_point += dc as f64 * 2.0 * condition_vertex(cfg);
    }
    FlopReport::from_per_point(per_point)
}
