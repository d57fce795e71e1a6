use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::noise::{truncated_gauss, NoiseSpec};
use crate::embedding::{locate_axis, AxisSpan, Corners, MAX_DIM};
use crate::error::{Error, Result};
use crate::field_data::{Batch, NormalizedDataset};

pub const COINCIDENT: f64 = 1e-9;
pub const DEFAULT_K: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    #[default]
    #[serde(rename = "none")]
    None,
    #[serde(rename = "vc")]
    Vc,
    #[serde(rename = "vp-s")]
    VpS,
    /// Conditional-only pairs: VP-SC with the spatial noise switched off.
    #[serde(rename = "vp-c")]
    VpC,
    #[serde(rename = "vp-sc")]
    VpSc,
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Vc => "vc",
            Self::VpS => "vp-s",
            Self::VpC => "vp-c",
            Self::VpSc => "vp-sc",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub spatial: Option<NoiseSpec>,
    #[serde(default)]
    pub conditional: Option<NoiseSpec>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_prob")]
    pub apply_prob: f64,
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_prob() -> f64 {
    1.0
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::None,
            spatial: None,
            conditional: None,
            k: DEFAULT_K,
            apply_prob: 1.0,
        }
    }
}

/// One lattice spacing of the finest axis, in `[-1, 1]` units.
pub fn cell_spacing(resolution: &[usize]) -> f64 {
    2.0 / (resolution.iter().copied().max().unwrap_or(2) - 1) as f64
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.apply_prob) {
            return Err(Error::Config(format!("apply_prob {} outside [0, 1]", self.apply_prob)));
        }
        let need = |s: &Option<NoiseSpec>, what: &str| -> Result<()> {
            match s {
                Some(n) => n.validate(),
                None => Err(Error::Config(format!("strategy {} needs a {what} noise spec", self.strategy.label()))),
            }
        };
        match self.strategy {
            Strategy::None => Ok(()),
            Strategy::Vc | Strategy::VpS => need(&self.spatial, "spatial"),
            Strategy::VpC => need(&self.conditional, "conditional"),
            Strategy::VpSc => {
                need(&self.spatial, "spatial")?;
                need(&self.conditional, "conditional")
            }
        }
        .and_then(|_| {
            if matches!(self.strategy, Strategy::VpC | Strategy::VpSc) && self.k == 0 {
                Err(Error::Config("k must be at least 1".into()))
            } else {
                Ok(())
            }
        })
    }
}

/// Multilinear interpolation of f32 lattice values, accumulated in f64.
pub fn interp_member(resolution: &[usize], channels: usize, values: &[f32], x: &[f64]) -> Vec<f64> {
    let mut spans = [AxisSpan::<f64>::default(); MAX_DIM];
    for (a, (&xa, &r)) in x.iter().zip(resolution).enumerate() {
        spans[a] = locate_axis(xa, r);
    }
    let corners = Corners::new(resolution, &spans[..resolution.len()]);
    let mut out = vec![0.0; channels];
    for c in 0..corners.n {
        let row = &values[corners.idx[c] * channels..(corners.idx[c] + 1) * channels];
        for (o, &v) in out.iter_mut().zip(row) {
            *o += corners.w[c] * v as f64;
        }
    }
    out
}

fn perturb<R: Rng + ?Sized>(p: &[f64], spec: &NoiseSpec, lo: f64, hi: f64, rng: &mut R) -> Vec<f64> {
    let e = truncated_gauss(spec, p.len(), rng);
    p.iter().zip(e).map(|(a, b)| (a + b).clamp(lo, hi)).collect()
}

/// Perturbed coordinate, unchanged value.
pub fn vc_augment<R: Rng + ?Sized>(x: &[f64], v: &[f32], spec: &NoiseSpec, rng: &mut R) -> (Vec<f64>, Vec<f32>) {
    (perturb(x, spec, -1.0, 1.0, rng), v.to_vec())
}

/// Perturbed coordinate with its value interpolated on the member lattice.
pub fn vp_s<R: Rng + ?Sized>(
    x: &[f64],
    resolution: &[usize],
    channels: usize,
    values: &[f32],
    spec: &NoiseSpec,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let xt = perturb(x, spec, -1.0, 1.0, rng);
    let v = interp_member(resolution, channels, values, &xt);
    (xt, v)
}

/// Inverse-distance weights of `target` against `points`. A point closer than
/// [`COINCIDENT`] takes all the weight.
pub fn idw_weights(target: &[f64], points: &[&[f64]]) -> Vec<f64> {
    let dist: Vec<f64> = points
        .iter()
        .map(|p| p.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .collect();
    if let Some(hit) = dist.iter().position(|&d| d < COINCIDENT) {
        let mut w = vec![0.0; points.len()];
        w[hit] = 1.0;
        return w;
    }
    let inv: Vec<f64> = dist.iter().map(|d| 1.0 / d).collect();
    let total: f64 = inv.iter().sum();
    inv.iter().map(|w| w / total).collect()
}

/// Distinct train conditions (normalized), each tied to its lowest-index member.
#[derive(Clone, Debug)]
pub struct ConditionIndex {
    conditions: Vec<Vec<f64>>,
    members: Vec<usize>,
}

impl ConditionIndex {
    pub fn new(ds: &NormalizedDataset) -> Self {
        let mut train = ds.train.clone();
        train.sort_unstable();
        let mut conditions: Vec<Vec<f64>> = Vec::new();
        let mut members = Vec::new();
        for m in train {
            let c: Vec<f64> = ds.members[m].condition.iter().map(|&v| v as f64).collect();
            if conditions.contains(&c) {
                log::info!("member {m} repeats a train condition; dropped from the neighbor index");
                continue;
            }
            conditions.push(c);
            members.push(m);
        }
        Self { conditions, members }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn condition(&self, slot: usize) -> &[f64] {
        &self.conditions[slot]
    }

    pub fn member(&self, slot: usize) -> usize {
        self.members[slot]
    }

    /// Slots of the `k` nearest conditions, ties broken by member index.
    pub fn nearest(&self, c: &[f64], k: usize) -> Vec<usize> {
        let mut order: Vec<(f64, usize)> = self
            .conditions
            .iter()
            .enumerate()
            .map(|(s, p)| (p.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), s))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(self.members[a.1].cmp(&self.members[b.1])));
        order.into_iter().take(k).map(|(_, s)| s).collect()
    }
}

/// Spatio-conditional pair for a sample of member `member` at `x`. With
/// `spatial = None` the coordinate is left alone.
pub fn vp_sc<R: Rng + ?Sized>(
    x: &[f64],
    member: usize,
    ds: &NormalizedDataset,
    index: &ConditionIndex,
    spatial: Option<&NoiseSpec>,
    conditional: &NoiseSpec,
    k: usize,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let ci: Vec<f64> = ds.members[member].condition.iter().map(|&v| v as f64).collect();
    let xt = match spatial {
        Some(s) => perturb(x, s, -1.0, 1.0, rng),
        None => x.to_vec(),
    };
    let ct = perturb(&ci, conditional, 0.0, 1.0, rng);
    let slots = index.nearest(&ci, k);
    let points: Vec<&[f64]> = slots.iter().map(|&s| index.condition(s)).collect();
    let w = idw_weights(&ct, &points);
    let mut v = vec![0.0; ds.channels];
    for (&s, &wk) in slots.iter().zip(&w) {
        if wk == 0.0 {
            continue;
        }
        let cand = interp_member(&ds.resolution, ds.channels, &ds.members[index.member(s)].values, &xt);
        for (o, c) in v.iter_mut().zip(cand) {
            *o += wk * c;
        }
    }
    (xt, ct, v)
}

/// Rewrites batch samples in place according to the configured strategy.
pub struct Augmenter {
    cfg: AugmentConfig,
    index: Option<ConditionIndex>,
    k: usize,
    rng: ChaCha8Rng,
}

impl Augmenter {
    pub fn new(ds: &NormalizedDataset, cfg: AugmentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let conditional = matches!(cfg.strategy, Strategy::VpC | Strategy::VpSc);
        if conditional && ds.dim_c() == 0 {
            return Err(Error::Config(format!("strategy {} needs conditioned members", cfg.strategy.label())));
        }
        if conditional && cfg.k > ds.train.len() {
            return Err(Error::Config(format!("k = {} exceeds {} train members", cfg.k, ds.train.len())));
        }
        let index = conditional.then(|| ConditionIndex::new(ds));
        let k = match &index {
            Some(ix) if ix.len() < cfg.k => {
                log::warn!("only {} distinct train conditions; k reduced from {}", ix.len(), cfg.k);
                ix.len()
            }
            _ => cfg.k,
        };
        Ok(Self {
            cfg,
            index,
            k,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x6175_676d),
        })
    }

    pub fn config(&self) -> &AugmentConfig {
        &self.cfg
    }

    pub fn apply(&mut self, batch: &mut Batch, ds: &NormalizedDataset) {
        if self.cfg.strategy == Strategy::None {
            return;
        }
        let d = ds.dim();
        let dc = ds.dim_c();
        let ch = ds.channels;
        for i in 0..batch.len() {
            if self.cfg.apply_prob < 1.0 && self.rng.random::<f64>() >= self.cfg.apply_prob {
                continue;
            }
            let x: Vec<f64> = batch.x[i * d..(i + 1) * d].iter().map(|&v| v as f64).collect();
            let m = batch.member[i];
            let (xt, ct, v): (Vec<f64>, Option<Vec<f64>>, Vec<f64>) = match self.cfg.strategy {
                Strategy::None => unreachable!(),
                Strategy::Vc => {
                    let (xt, v) = vc_augment(&x, &batch.v[i * ch..(i + 1) * ch], self.cfg.spatial.as_ref().unwrap(), &mut self.rng);
                    (xt, None, v.iter().map(|&a| a as f64).collect())
                }
                Strategy::VpS => {
                    let (xt, v) = vp_s(
                        &x,
                        &ds.resolution,
                        ch,
                        &ds.members[m].values,
                        self.cfg.spatial.as_ref().unwrap(),
                        &mut self.rng,
                    );
                    (xt, None, v)
                }
                Strategy::VpC | Strategy::VpSc => {
                    let spatial = if self.cfg.strategy == Strategy::VpSc { self.cfg.spatial.as_ref() } else { None };
                    let (xt, ct, v) = vp_sc(
                        &x,
                        m,
                        ds,
                        self.index.as_ref().unwrap(),
                        spatial,
                        self.cfg.conditional.as_ref().unwrap(),
                        self.k,
                        &mut self.rng,
                    );
                    (xt, Some(ct), v)
                }
            };
            for (o, a) in batch.x[i * d..(i + 1) * d].iter_mut().zip(xt) {
                *o = a as f32;
            }
            if let Some(ct) = ct {
                for (o, a) in batch.c[i * dc..(i + 1) * dc].iter_mut().zip(ct) {
                    *o = a as f32;
                }
            }
            for (o, a) in batch.v[i * ch..(i + 1) * ch].iter_mut().zip(v) {
                *o = a as f32;
            }
        }
    }
}
