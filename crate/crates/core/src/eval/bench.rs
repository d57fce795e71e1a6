use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::FieldPredictor;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub n_conditions: usize,
    pub n_coords: usize,
    pub runs: usize,
    pub median_seconds: f64,
    /// Median batch time scaled linearly to 10⁹ points.
    pub seconds_per_1e9_points: f64,
}

/// Times `runs` predictions of every condition crossed with every coordinate
/// and reports the median.
pub fn benchmark_inference(
    model: &dyn FieldPredictor,
    n_conditions: usize,
    n_coords: usize,
    runs: usize,
    seed: u64,
) -> Result<BenchReport> {
    if runs < 3 {
        return Err(Error::Config(format!("benchmark needs at least 3 runs, got {runs}")));
    }
    if n_conditions == 0 || n_coords == 0 {
        return Err(Error::Config("benchmark batch is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, dc) = (model.dim_x(), model.dim_c());
    let coords: Vec<f32> = (0..n_coords * d).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let conds: Vec<f32> = (0..n_conditions * dc).map(|_| rng.random_range(0.0..=1.0)).collect();
    let n = n_conditions * n_coords;
    let mut x = Vec::with_capacity(n * d);
    let mut c = Vec::with_capacity(n * dc);
    for k in 0..n_conditions {
        for j in 0..n_coords {
            x.extend_from_slice(&coords[j * d..(j + 1) * d]);
            c.extend_from_slice(&conds[k * dc..(k + 1) * dc]);
        }
    }
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t = Instant::now();
        let y = model.predict(&x, &c, n)?;
        times.push(t.elapsed().as_secs_f64());
        std::hint::black_box(y);
    }
    times.sort_by(f64::total_cmp);
    let median = times[runs / 2];
    Ok(BenchReport {
        n_conditions,
        n_coords,
        runs,
        median_seconds: median,
        seconds_per_1e9_points: median * 1e9 / n as f64,
    })
}
