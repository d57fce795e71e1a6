use crate::embedding::grid::{lattice_axis, unflatten, validate_resolution, AxisSpan, Corners, FeatureGrid};
use crate::error::{Error, Result};
use crate::numerics::Real;

/// One contribution to a unified vertex: `weight · sources[source].vertex(vertex)`
/// lands in that source's channel block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tap<T> {
    pub source: usize,
    pub vertex: usize,
    pub weight: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SourceLayout {
    pub resolution: Vec<usize>,
    pub channels: usize,
    /// First channel of this source in the unified feature.
    pub offset: usize,
}

/// How base structures map onto a unified lattice. Each unified vertex is a
/// fixed weighted sum of base vertices, so gathering and scattering through
/// the taps is the exact forward and adjoint of the resampling.
#[derive(Clone, Debug)]
pub struct UnifyPlan {
    kind: PlanKind,
}

#[derive(Clone, Debug)]
enum PlanKind {
    /// Every level resampled onto one lattice, concatenated level-major.
    Spatial {
        unified: Vec<usize>,
        sources: Vec<SourceLayout>,
        /// `[source][axis][unified index]`
        spans: Vec<Vec<Vec<AxisSpan<f64>>>>,
    },
    /// Per-parameter lines resampled to that parameter's finest line, then all
    /// parameters resampled to one global line. Sources are parameter-major.
    Condition {
        global: usize,
        sources: Vec<SourceLayout>,
        /// source range per parameter
        params: Vec<std::ops::Range<usize>>,
        /// `[param][global index]` into the parameter's local line
        global_spans: Vec<Vec<AxisSpan<f64>>>,
        /// `[source][local index]` into the source line
        local_spans: Vec<Vec<AxisSpan<f64>>>,
    },
}

impl UnifyPlan {
    /// `levels` are `(resolution, channels)` pairs. Without a target the unified
    /// lattice is the elementwise maximum of the level resolutions.
    pub fn spatial(levels: &[(Vec<usize>, usize)], target: Option<&[usize]>) -> Result<Self> {
        let first = levels
            .first()
            .ok_or_else(|| Error::Config("spatial embedding needs at least one level".into()))?;
        let d = first.0.len();
        for (res, ch) in levels {
            validate_resolution(res)?;
            if res.len() != d {
                return Err(Error::Config(format!(
                    "level ranks differ: {} vs {}",
                    res.len(),
                    d
                )));
            }
            if *ch == 0 {
                return Err(Error::Config("level with zero channels".into()));
            }
        }
        let coarse_max: Vec<usize> = (0..d).map(|a| levels.iter().map(|l| l.0[a]).max().unwrap()).collect();
        let unified = match target {
            None => coarse_max,
            Some(t) => {
                validate_resolution(t)?;
                if t.len() != d {
                    return Err(Error::Config(format!("target rank {} for rank-{d} levels", t.len())));
                }
                if t.iter().zip(&coarse_max).any(|(a, b)| a < b) {
                    return Err(Error::Config(format!(
                        "super-resolution target {t:?} is coarser than level resolution {coarse_max:?}"
                    )));
                }
                t.to_vec()
            }
        };
        let mut offset = 0;
        let mut sources = Vec::with_capacity(levels.len());
        let mut spans = Vec::with_capacity(levels.len());
        for (res, ch) in levels {
            sources.push(SourceLayout {
                resolution: res.clone(),
                channels: *ch,
                offset,
            });
            offset += ch;
            spans.push(
                (0..d)
                    .map(|a| (0..unified[a]).map(|i| lattice_axis(i, res[a], unified[a])).collect())
                    .collect(),
            );
        }
        Ok(Self {
            kind: PlanKind::Spatial {
                unified,
                sources,
                spans,
            },
        })
    }

    /// `lines[k]` holds `(resolution, channels)` for every line of parameter `k`.
    pub fn condition(lines: &[Vec<(usize, usize)>], global: Option<usize>) -> Result<Self> {
        if lines.is_empty() {
            return Err(Error::Config("condition embedding needs at least one parameter".into()));
        }
        let mut local_max = Vec::with_capacity(lines.len());
        for (k, ls) in lines.iter().enumerate() {
            if ls.is_empty() {
                return Err(Error::Config(format!("condition parameter {k} has no lines")));
            }
            for &(r, ch) in ls {
                validate_resolution(&[r])?;
                if ch == 0 {
                    return Err(Error::Config("line with zero channels".into()));
                }
            }
            local_max.push(ls.iter().map(|l| l.0).max().unwrap());
        }
        let coarse = *local_max.iter().max().unwrap();
        let global = match global {
            None => coarse,
            Some(g) if g < coarse => {
                return Err(Error::Config(format!(
                    "global condition resolution {g} is coarser than line resolution {coarse}"
                )))
            }
            Some(g) => g,
        };
        let mut sources = Vec::new();
        let mut params = Vec::new();
        let mut local_spans = Vec::new();
        let mut offset = 0;
        for (k, ls) in lines.iter().enumerate() {
            let start = sources.len();
            for &(r, ch) in ls {
                sources.push(SourceLayout {
                    resolution: vec![r],
                    channels: ch,
                    offset,
                });
                offset += ch;
                local_spans.push((0..local_max[k]).map(|j| lattice_axis(j, r, local_max[k])).collect());
            }
            params.push(start..sources.len());
        }
        let global_spans = local_max
            .iter()
            .map(|&m| (0..global).map(|g| lattice_axis(g, m, global)).collect())
            .collect();
        Ok(Self {
            kind: PlanKind::Condition {
                global,
                sources,
                params,
                global_spans,
                local_spans,
            },
        })
    }

    pub fn sources(&self) -> &[SourceLayout] {
        match &self.kind {
            PlanKind::Spatial { sources, .. } | PlanKind::Condition { sources, .. } => sources,
        }
    }

    pub fn unified_res(&self) -> Vec<usize> {
        match &self.kind {
            PlanKind::Spatial { unified, .. } => unified.clone(),
            PlanKind::Condition { global, .. } => vec![*global],
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            PlanKind::Spatial { unified, .. } => unified.len(),
            PlanKind::Condition { .. } => 1,
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.unified_res().iter().product()
    }

    /// Concatenated channel width before any lift.
    pub fn base_width(&self) -> usize {
        self.sources().iter().map(|s| s.channels).sum()
    }

    /// `level{l}` for spatial plans, `param{k}.level{l}` for condition plans.
    pub fn source_names(&self) -> Vec<String> {
        match &self.kind {
            PlanKind::Spatial { sources, .. } => (0..sources.len()).map(|l| format!("level{l}")).collect(),
            PlanKind::Condition { params, .. } => params
                .iter()
                .enumerate()
                .flat_map(|(k, r)| (0..r.len()).map(move |l| format!("param{k}.level{l}")))
                .collect(),
        }
    }

    /// Number of condition parameters (1 for spatial plans).
    pub fn groups(&self) -> usize {
        match &self.kind {
            PlanKind::Spatial { .. } => 1,
            PlanKind::Condition { params, .. } => params.len(),
        }
    }

    /// Appends the taps of unified vertex `vertex` to `out`; zero-weight taps are dropped.
    pub fn taps<T: Real>(&self, vertex: usize, out: &mut Vec<Tap<T>>) {
        match &self.kind {
            PlanKind::Spatial {
                unified,
                sources,
                spans,
            } => {
                let multi = unflatten(unified, vertex);
                for (s, src) in sources.iter().enumerate() {
                    let mut ax = [AxisSpan::<T>::default(); 3];
                    for (a, &i) in multi.iter().enumerate() {
                        let sp = spans[s][a][i];
                        ax[a] = AxisSpan {
                            lo: sp.lo,
                            frac: T::lit(sp.frac),
                            slope: T::zero(),
                        };
                    }
                    let c = Corners::new(&src.resolution, &ax[..multi.len()]);
                    for k in 0..c.n {
                        if c.w[k] != T::zero() {
                            out.push(Tap {
                                source: s,
                                vertex: c.idx[k],
                                weight: c.w[k],
                            });
                        }
                    }
                }
            }
            PlanKind::Condition {
                params,
                global_spans,
                local_spans,
                ..
            } => {
                for (k, range) in params.iter().enumerate() {
                    let g = global_spans[k][vertex];
                    for (j, wg) in [(g.lo, 1.0 - g.frac), (g.lo + 1, g.frac)] {
                        if wg == 0.0 {
                            continue;
                        }
                        for s in range.clone() {
                            let l = local_spans[s][j];
                            for (v, wl) in [(l.lo, 1.0 - l.frac), (l.lo + 1, l.frac)] {
                                if wl != 0.0 {
                                    out.push(Tap {
                                        source: s,
                                        vertex: v,
                                        weight: T::lit(wg * wl),
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Unified base feature at one vertex, written into `out[..base_width]`.
    pub fn gather<T: Real>(&self, sources: &[&FeatureGrid<T>], taps: &[Tap<T>], out: &mut [T]) {
        out.iter_mut().for_each(|v| *v = T::zero());
        let layout = self.sources();
        for t in taps {
            let l = &layout[t.source];
            let row = sources[t.source].vertex(t.vertex);
            for (o, &v) in out[l.offset..l.offset + l.channels].iter_mut().zip(row) {
                *o += t.weight * v;
            }
        }
    }

    /// Adjoint of [`gather`](Self::gather): adds the base-vertex gradients to `grads[source]`.
    pub fn scatter<T: Real>(&self, taps: &[Tap<T>], dy: &[T], grads: &mut [&mut [T]]) {
        let layout = self.sources();
        for t in taps {
            let l = &layout[t.source];
            let row = &mut grads[t.source][t.vertex * l.channels..(t.vertex + 1) * l.channels];
            for (g, &d) in row.iter_mut().zip(&dy[l.offset..l.offset + l.channels]) {
                *g += t.weight * d;
            }
        }
    }

    pub(crate) fn check_sources<T: Real>(&self, grids: &[&FeatureGrid<T>]) -> Result<()> {
        let layout = self.sources();
        if grids.len() != layout.len() {
            return Err(Error::Dimension(format!(
                "plan expects {} structures, got {}",
                layout.len(),
                grids.len()
            )));
        }
        for (g, l) in grids.iter().zip(layout) {
            if g.resolution() != l.resolution.as_slice() || g.channels() != l.channels {
                return Err(Error::Dimension(format!(
                    "structure {:?}x{} does not match planned {:?}x{}",
                    g.resolution(),
                    g.channels(),
                    l.resolution,
                    l.channels
                )));
            }
        }
        Ok(())
    }
}
