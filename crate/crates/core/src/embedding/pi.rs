use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::grid::FeatureGrid;
use crate::embedding::plan::UnifyPlan;
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// Writes the sinusoidal lift of `x` into `out` (`x.len() · 2k` values):
/// per channel `sin(2^0 π f), cos(2^0 π f), …, sin(2^{k−1} π f), cos(2^{k−1} π f)`.
pub fn pe_lift_row<T: Real>(x: &[T], k: usize, out: &mut [T]) {
    let pi = T::lit(std::f64::consts::PI);
    for (c, &f) in x.iter().enumerate() {
        let mut freq = pi;
        for j in 0..k {
            let (s, co) = (freq * f).sin_cos();
            out[c * 2 * k + 2 * j] = s;
            out[c * 2 * k + 2 * j + 1] = co;
            freq = freq + freq;
        }
    }
}

/// Gradient of [`pe_lift_row`] with respect to `x`, added into `dx`.
pub fn pe_backward_row<T: Real>(x: &[T], k: usize, dy: &[T], dx: &mut [T]) {
    let pi = T::lit(std::f64::consts::PI);
    for (c, &f) in x.iter().enumerate() {
        let mut freq = pi;
        let mut acc = T::zero();
        for j in 0..k {
            let (s, co) = (freq * f).sin_cos();
            acc += freq * (co * dy[c * 2 * k + 2 * j] - s * dy[c * 2 * k + 2 * j + 1]);
            freq = freq + freq;
        }
        dx[c] += acc;
    }
}

/// Lifts the last axis of `features` from `c` to `c · 2k` channels.
pub fn pe_lift<T: Real>(features: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    if k == 0 {
        return Err(Error::Config("positional lift needs at least one frequency".into()));
    }
    let (rows, c) = features.rows_cols();
    let mut out = vec![T::zero(); rows * c * 2 * k];
    for (x, o) in features.data().chunks(c.max(1)).zip(out.chunks_mut(c * 2 * k)) {
        pe_lift_row(x, k, o);
    }
    let mut shape = features.shape().to_vec();
    *shape.last_mut().unwrap() = c * 2 * k;
    Tensor::new(shape, out)
}

/// Resamples `grid` onto a finer align-corners lattice. Each new vertex holds
/// the interpolated source feature at its position.
pub fn ssr_upsample<T: Real>(grid: &FeatureGrid<T>, target: &[usize]) -> Result<FeatureGrid<T>> {
    let plan = UnifyPlan::spatial(&[(grid.resolution().to_vec(), grid.channels())], Some(target))?;
    let data = materialize_base(&plan, &[grid]);
    FeatureGrid::new(target.to_vec(), grid.channels(), data)
}

/// Gradient of [`ssr_upsample`] with respect to the source vertices, for the
/// upstream gradient `dy` laid out like the upsampled grid.
pub fn ssr_upsample_backward<T: Real>(source_res: &[usize], channels: usize, target: &[usize], dy: &[T]) -> Result<Vec<T>> {
    let plan = UnifyPlan::spatial(&[(source_res.to_vec(), channels)], Some(target))?;
    if dy.len() != plan.num_vertices() * channels {
        return Err(Error::Dimension(format!(
            "upstream gradient of length {} for {} vertices x {channels}",
            dy.len(),
            plan.num_vertices()
        )));
    }
    let mut grad = vec![T::zero(); source_res.iter().product::<usize>() * channels];
    let mut taps = Vec::new();
    for v in 0..plan.num_vertices() {
        taps.clear();
        plan.taps(v, &mut taps);
        plan.scatter(&taps, &dy[v * channels..(v + 1) * channels], &mut [&mut grad[..]]);
    }
    Ok(grad)
}

/// Unified base features for every vertex of the plan's lattice, row-major.
pub(crate) fn materialize_base<T: Real>(plan: &UnifyPlan, sources: &[&FeatureGrid<T>]) -> Vec<T> {
    let w = plan.base_width();
    let mut out = vec![T::zero(); plan.num_vertices() * w];
    out.par_chunks_mut(w * 256).enumerate().for_each(|(chunk, block)| {
        let mut taps = Vec::new();
        for (i, row) in block.chunks_mut(w).enumerate() {
            taps.clear();
            plan.taps(chunk * 256 + i, &mut taps);
            plan.gather(sources, &taps, row);
        }
    });
    out
}

/// Where each base structure's channels sit in a unified feature.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelBlock {
    pub name: String,
    pub offset: usize,
    pub channels: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelManifest {
    /// Concatenation order before any lift.
    pub blocks: Vec<ChannelBlock>,
    /// Frequency count of the lift, if applied. Each base channel then spans
    /// `2k` consecutive unified channels.
    pub pe_frequencies: Option<usize>,
    /// Contiguous channel groups the split hands back (condition parameters).
    pub groups: usize,
}

impl ChannelManifest {
    pub fn base_width(&self) -> usize {
        self.blocks.iter().map(|b| b.channels).sum()
    }

    pub fn width(&self) -> usize {
        self.base_width() * self.pe_frequencies.map_or(1, |k| 2 * k)
    }

    pub(crate) fn for_plan(plan: &UnifyPlan, pe: Option<usize>) -> Self {
        let blocks = plan
            .source_names()
            .into_iter()
            .zip(plan.sources())
            .map(|(name, s)| ChannelBlock {
                name,
                offset: s.offset,
                channels: s.channels,
            })
            .collect();
        Self {
            blocks,
            pe_frequencies: pe,
            groups: plan.groups(),
        }
    }
}

/// A single grid holding the concatenated, resampled (and optionally lifted)
/// features of several base structures.
#[derive(Clone, Debug)]
pub struct UnifiedStructure<T> {
    pub grid: FeatureGrid<T>,
    pub manifest: ChannelManifest,
}

/// Resamples every level to a common lattice and concatenates them level-major.
pub fn unify_spatial<T: Real>(grids: &[FeatureGrid<T>], ssr: Option<&[usize]>, pe: Option<usize>) -> Result<UnifiedStructure<T>> {
    let levels: Vec<_> = grids.iter().map(|g| (g.resolution().to_vec(), g.channels())).collect();
    let plan = UnifyPlan::spatial(&levels, ssr)?;
    let refs: Vec<&FeatureGrid<T>> = grids.iter().collect();
    unify_with_plan(&plan, &refs, pe)
}

pub(crate) fn unify_with_plan<T: Real>(
    plan: &UnifyPlan,
    sources: &[&FeatureGrid<T>],
    pe: Option<usize>,
) -> Result<UnifiedStructure<T>> {
    plan.check_sources(sources)?;
    if pe == Some(0) {
        return Err(Error::Config("positional lift needs at least one frequency".into()));
    }
    let base = materialize_base(plan, sources);
    let manifest = ChannelManifest::for_plan(plan, pe);
    let data = match pe {
        None => base,
        Some(k) => {
            let w = plan.base_width();
            let mut out = vec![T::zero(); base.len() * 2 * k];
            for (x, o) in base.chunks(w).zip(out.chunks_mut(w * 2 * k)) {
                pe_lift_row(x, k, o);
            }
            out
        }
    };
    Ok(UnifiedStructure {
        grid: FeatureGrid::new(plan.unified_res(), manifest.width(), data)?,
        manifest,
    })
}

/// Learnable 1D lines for each condition parameter, coarse to fine.
#[derive(Clone, Debug)]
pub struct FeatureLineSet<T> {
    lines: Vec<Vec<FeatureGrid<T>>>,
}

impl<T: Real> FeatureLineSet<T> {
    pub fn new(lines: Vec<Vec<FeatureGrid<T>>>) -> Result<Self> {
        if lines.is_empty() {
            return Err(Error::Config("condition embedding needs at least one parameter".into()));
        }
        for (k, ls) in lines.iter().enumerate() {
            if ls.is_empty() {
                return Err(Error::Config(format!("condition parameter {k} has no lines")));
            }
            if ls.iter().any(|g| g.dim() != 1) {
                return Err(Error::Dimension(format!("condition parameter {k} has a non-1D line")));
            }
            if ls.windows(2).any(|w| w[0].resolution()[0] > w[1].resolution()[0]) {
                return Err(Error::Config(format!("lines of parameter {k} are not sorted by resolution")));
            }
        }
        Ok(Self { lines })
    }

    pub fn num_params(&self) -> usize {
        self.lines.len()
    }

    pub fn lines(&self) -> &[Vec<FeatureGrid<T>>] {
        &self.lines
    }

    pub fn lines_mut(&mut self) -> &mut [Vec<FeatureGrid<T>>] {
        &mut self.lines
    }

    pub fn layout(&self) -> Vec<Vec<(usize, usize)>> {
        self.lines
            .iter()
            .map(|ls| ls.iter().map(|g| (g.resolution()[0], g.channels())).collect())
            .collect()
    }

    pub fn flat(&self) -> Vec<&FeatureGrid<T>> {
        self.lines.iter().flatten().collect()
    }
}

/// Two-stage condition unification: each parameter's lines are resampled to
/// its finest line and concatenated, then all parameters are resampled to one
/// global line (default: finest over parameters) and concatenated.
pub fn unify_condition<T: Real>(lines: &FeatureLineSet<T>, global: Option<usize>) -> Result<UnifiedStructure<T>> {
    let plan = UnifyPlan::condition(&lines.layout(), global)?;
    unify_with_plan(&plan, &lines.flat(), None)
}

/// Partitions the channels of a unified condition structure into `groups`
/// contiguous 1D lines.
pub fn split_condition<T: Real>(refined: &UnifiedStructure<T>, groups: usize) -> Result<Vec<FeatureGrid<T>>> {
    split_channels(&refined.grid, groups)
}

pub(crate) fn split_channels<T: Real>(grid: &FeatureGrid<T>, groups: usize) -> Result<Vec<FeatureGrid<T>>> {
    let w = grid.channels();
    if groups == 0 || w % groups != 0 {
        return Err(Error::Internal(format!(
            "width {w} cannot be split into {groups} equal groups"
        )));
    }
    let part = w / groups;
    (0..groups)
        .map(|k| {
            let data = grid
                .data()
                .chunks(w)
                .flat_map(|row| row[k * part..(k + 1) * part].iter().copied())
                .collect();
            FeatureGrid::new(grid.resolution().to_vec(), part, data)
        })
        .collect()
}

/// Channel-wise concatenation of grids on one lattice; inverse of the split.
pub fn concat_channels<T: Real>(grids: &[FeatureGrid<T>]) -> Result<FeatureGrid<T>> {
    let first = grids
        .first()
        .ok_or_else(|| Error::Config("nothing to concatenate".into()))?;
    if grids.iter().any(|g| g.resolution() != first.resolution()) {
        return Err(Error::Dimension("concatenated grids must share a lattice".into()));
    }
    let width: usize = grids.iter().map(|g| g.channels()).sum();
    let mut data = Vec::with_capacity(first.num_vertices() * width);
    for v in 0..first.num_vertices() {
        for g in grids {
            data.extend_from_slice(g.vertex(v));
        }
    }
    FeatureGrid::new(first.resolution().to_vec(), width, data)
}
