use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::NormalizedDataset;
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 256;

/// Inverse-frequency weights over a `bins`-bucket histogram of `values`
/// (one entry per vertex). A constant field lands in one bucket.
pub fn importance_scores(values: &[f32], bins: usize) -> Result<Vec<f64>> {
    if bins < 2 {
        return Err(Error::Config(format!("histogram needs at least 2 bins, got {bins}")));
    }
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo) as f64;
    let bin_of = |v: f32| -> usize {
        if !(span > 0.0) {
            return 0;
        }
        (((v - lo) as f64 / span * bins as f64) as usize).min(bins - 1)
    };
    let mut counts = vec![0usize; bins];
    for &v in values {
        counts[bin_of(v)] += 1;
    }
    Ok(values
        .iter()
        .map(|&v| 1.0 / counts[bin_of(v)].max(1) as f64)
        .collect())
}

/// Per-member scores (sum of vertex weights), normalized to sum to one.
pub fn member_scores(per_vertex: &[Vec<f64>]) -> Vec<f64> {
    let sums: Vec<f64> = per_vertex.iter().map(|w| w.iter().sum()).collect();
    let total: f64 = sums.iter().sum();
    sums.iter().map(|s| s / total).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_c: usize,
    pub n_x: usize,
    #[serde(default)]
    pub member_importance: bool,
    #[serde(default)]
    pub coord_importance: bool,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_bins() -> usize {
    DEFAULT_BINS
}

impl SamplerConfig {
    pub fn uniform(n_c: usize, n_x: usize, seed: u64) -> Self {
        Self {
            n_c,
            n_x,
            member_importance: false,
            coord_importance: false,
            histogram_bins: DEFAULT_BINS,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_c == 0 || self.n_x == 0 {
            return Err(Error::Config(format!("sampler needs n_c, n_x >= 1, got {} and {}", self.n_c, self.n_x)));
        }
        if self.histogram_bins < 2 {
            return Err(Error::Config(format!("histogram_bins must be >= 2, got {}", self.histogram_bins)));
        }
        Ok(())
    }
}

/// `n_c · n_x` training triples, member-major.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub x: Vec<f32>,
    pub c: Vec<f32>,
    pub v: Vec<f32>,
    pub member: Vec<usize>,
    pub vertex: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.member.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member.is_empty()
    }
}

/// Owns its RNG; one per worker.
pub struct Sampler {
    cfg: SamplerConfig,
    rng: ChaCha8Rng,
    pool: Vec<usize>,
    member_weights: Option<Vec<f64>>,
    coord_dists: Vec<Option<WeightedIndex<f64>>>,
    warned: bool,
}

impl Sampler {
    /// Draws from the train split of `ds`.
    pub fn new(ds: &NormalizedDataset, cfg: SamplerConfig) -> Result<Self> {
        Self::over(ds, ds.train.clone(), cfg)
    }

    pub fn over(ds: &NormalizedDataset, pool: Vec<usize>, cfg: SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        if pool.is_empty() {
            return Err(Error::Data("sampler pool is empty".into()));
        }
        let need_scores = cfg.member_importance || cfg.coord_importance;
        let scores: Vec<Vec<f64>> = if need_scores {
            pool.iter()
                .map(|&m| {
                    let first: Vec<f32> = ds.members[m].values.iter().step_by(ds.channels).copied().collect();
                    importance_scores(&first, cfg.histogram_bins)
                })
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let member_weights = cfg.member_importance.then(|| member_scores(&scores));
        let coord_dists = if cfg.coord_importance {
            scores
                .iter()
                .map(|w| {
                    WeightedIndex::new(w)
                        .map(Some)
                        .map_err(|e| Error::Data(format!("importance weights: {e}")))
                })
                .collect::<Result<_>>()?
        } else {
            vec![None; pool.len()]
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            pool,
            member_weights,
            coord_dists,
            warned: false,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Positions within the pool, without replacement when the pool is large
    /// enough, otherwise with replacement.
    fn draw_members(&mut self) -> Vec<usize> {
        let n = self.pool.len();
        let k = self.cfg.n_c;
        if k > n {
            if !self.warned {
                log::warn!("n_c = {k} exceeds {n} pool members; sampling members with replacement");
                self.warned = true;
            }
            return match &self.member_weights {
                Some(w) => {
                    let dist = WeightedIndex::new(w).expect("member weights are positive");
                    (0..k).map(|_| dist.sample(&mut self.rng)).collect()
                }
                None => (0..k).map(|_| self.rng.random_range(0..n)).collect(),
            };
        }
        match &self.member_weights {
            Some(w) => {
                let mut w = w.clone();
                let mut out = Vec::with_capacity(k);
                for _ in 0..k {
                    let total: f64 = w.iter().sum();
                    let mut t = self.rng.random::<f64>() * total;
                    let mut pick = w.iter().rposition(|&x| x > 0.0).unwrap();
                    for (i, &x) in w.iter().enumerate() {
                        if x > 0.0 && t < x {
                            pick = i;
                            break;
                        }
                        t -= x;
                    }
                    out.push(pick);
                    w[pick] = 0.0;
                }
                out
            }
            None => rand::seq::index::sample(&mut self.rng, n, k).into_vec(),
        }
    }

    pub fn sample(&mut self, ds: &NormalizedDataset) -> Batch {
        let slots = self.draw_members();
        let nv = ds.num_vertices();
        let total = slots.len() * self.cfg.n_x;
        let mut b = Batch {
            x: Vec::with_capacity(total * ds.dim()),
            c: Vec::with_capacity(total * ds.dim_c()),
            v: Vec::with_capacity(total * ds.channels),
            member: Vec::with_capacity(total),
            vertex: Vec::with_capacity(total),
        };
        for slot in slots {
            let m = self.pool[slot];
            let member = &ds.members[m];
            for _ in 0..self.cfg.n_x {
                let j = match &self.coord_dists[slot] {
                    Some(d) => d.sample(&mut self.rng),
                    None => self.rng.random_range(0..nv),
                };
                ds.coord_into(j, &mut b.x);
                b.c.extend_from_slice(&member.condition);
                b.v.extend_from_slice(&member.values[j * ds.channels..(j + 1) * ds.channels]);
                b.member.push(m);
                b.vertex.push(j);
            }
        }
        b
    }
}
