use rayon::prelude::*;

use crate::embedding::{
    locate_axis, pe_backward_row, pe_lift_row, split_channels, AxisSpan, ChannelManifest, Corners, FeatureGrid, Tap,
    UnifyPlan, MAX_DIM,
};
use crate::error::{Error, Result};
use crate::numerics::{join, Parameters, Real, Tensor};
use crate::refiner::stack::{RefinerStack, StackCache};

/// One encoder branch: learnable base structures, the unification plan that
/// puts them on one lattice, an optional positional lift and an optional
/// refiner. Queries address `groups` channel slices of the unified lattice,
/// each with its own coordinate (one group for the spatial branch, one per
/// parameter for the condition branch).
#[derive(Clone, Debug)]
pub struct Branch<T> {
    pub sources: Vec<FeatureGrid<T>>,
    pub refiner: Option<RefinerStack<T>>,
    plan: UnifyPlan,
    pe: Option<usize>,
}

/// Activations of one batched query, kept for the backward pass.
pub struct BranchCache<T> {
    vertices: Vec<usize>,
    taps: Vec<Tap<T>>,
    tap_ends: Vec<usize>,
    base: Vec<T>,
    refined: Option<StackCache<T>>,
    corners: Vec<Corners<T>>,
    /// Position in `vertices` of every corner of every (row, group).
    local: Vec<[u32; 1 << MAX_DIM]>,
}

impl<T: Real> Branch<T> {
    pub fn new(sources: Vec<FeatureGrid<T>>, plan: UnifyPlan, pe: Option<usize>, refiner: Option<RefinerStack<T>>) -> Result<Self> {
        let refs: Vec<&FeatureGrid<T>> = sources.iter().collect();
        plan.check_sources(&refs)?;
        if pe == Some(0) {
            return Err(Error::Config("positional lift needs at least one frequency".into()));
        }
        let b = Self {
            sources,
            refiner: None,
            plan,
            pe,
        };
        if let Some(r) = &refiner {
            if r.width() != b.width() {
                return Err(Error::Dimension(format!(
                    "refiner width {} does not match unified width {}",
                    r.width(),
                    b.width()
                )));
            }
        }
        if b.width() % b.groups() != 0 {
            return Err(Error::Internal(format!(
                "unified width {} is not divisible into {} groups",
                b.width(),
                b.groups()
            )));
        }
        Ok(Self { refiner, ..b })
    }

    pub fn plan(&self) -> &UnifyPlan {
        &self.plan
    }

    pub fn pe(&self) -> Option<usize> {
        self.pe
    }

    pub fn groups(&self) -> usize {
        self.plan.groups()
    }

    /// Coordinates per group.
    pub fn coord_dim(&self) -> usize {
        self.plan.dim()
    }

    /// Unified (post-lift) channel width.
    pub fn width(&self) -> usize {
        self.plan.base_width() * self.pe.map_or(1, |k| 2 * k)
    }

    /// Channels each group contributes to the branch feature.
    pub fn group_width(&self) -> usize {
        self.width() / self.groups()
    }

    pub fn manifest(&self) -> ChannelManifest {
        ChannelManifest::for_plan(&self.plan, self.pe)
    }

    fn source_refs(&self) -> Vec<&FeatureGrid<T>> {
        self.sources.iter().collect()
    }

    /// Base → lifted features for rows already gathered into `base`.
    fn lift(&self, base: &[T], n: usize) -> Vec<T> {
        match self.pe {
            None => base.to_vec(),
            Some(k) => {
                let w = self.plan.base_width();
                let mut out = vec![T::zero(); n * w * 2 * k];
                for (x, o) in base.chunks(w).zip(out.chunks_mut(w * 2 * k)) {
                    pe_lift_row(x, k, o);
                }
                out
            }
        }
    }

    /// Refined unified features of the given lattice vertices, without caching.
    pub fn vertex_features(&self, vertices: &[usize]) -> Vec<T> {
        let w = self.plan.base_width();
        let srcs = self.source_refs();
        let mut base = vec![T::zero(); vertices.len() * w];
        let mut taps = Vec::new();
        for (&v, row) in vertices.iter().zip(base.chunks_mut(w)) {
            taps.clear();
            self.plan.taps(v, &mut taps);
            self.plan.gather(&srcs, &taps, row);
        }
        let lifted = self.lift(&base, vertices.len());
        match &self.refiner {
            Some(r) => r.forward(&lifted, vertices.len()),
            None => lifted,
        }
    }

    /// The whole refined unified lattice, built in parallel vertex chunks.
    pub fn materialize(&self) -> Result<FeatureGrid<T>> {
        const CHUNK: usize = 2048;
        let w = self.width();
        let nv = self.plan.num_vertices();
        let mut data = vec![T::zero(); nv * w];
        data.par_chunks_mut(CHUNK * w).enumerate().for_each(|(c, out)| {
            let start = c * CHUNK;
            let ids: Vec<usize> = (start..start + out.len() / w).collect();
            out.copy_from_slice(&self.vertex_features(&ids));
        });
        FeatureGrid::new(self.plan.unified_res(), w, data)
    }

    /// Materialized lattice split into one grid per group.
    pub fn materialize_groups(&self) -> Result<Vec<FeatureGrid<T>>> {
        let g = self.materialize()?;
        if self.groups() == 1 {
            Ok(vec![g])
        } else {
            split_channels(&g, self.groups())
        }
    }

    fn corners(&self, coords: &[T], n: usize) -> Result<Vec<Corners<T>>> {
        let d = self.coord_dim();
        let groups = self.groups();
        if coords.len() != n * groups * d {
            return Err(Error::Dimension(format!(
                "{} coordinates for {n} rows of {groups}x{d}",
                coords.len()
            )));
        }
        let res = self.plan.unified_res();
        let mut out = Vec::with_capacity(n * groups);
        for x in coords.chunks(d) {
            if x.iter().any(|v| v.is_nan()) {
                return Err(Error::Input(format!("NaN coordinate {x:?}")));
            }
            let mut spans = [AxisSpan::default(); MAX_DIM];
            for a in 0..d {
                spans[a] = locate_axis(x[a], res[a]);
            }
            out.push(Corners::new(&res, &spans[..d]));
        }
        Ok(out)
    }

    /// Branch features for `n` rows. `coords` holds, per row, `groups`
    /// coordinates of rank `coord_dim` in `[-1, 1]`. Only the lattice vertices
    /// touched by the batch are unified and refined.
    pub fn forward_cached(&self, coords: &[T], n: usize) -> Result<(Vec<T>, BranchCache<T>)> {
        let corners = self.corners(coords, n)?;
        let mut vertices: Vec<usize> = corners.iter().flat_map(|c| c.idx[..c.n].iter().copied()).collect();
        vertices.sort_unstable();
        vertices.dedup();

        let w = self.plan.base_width();
        let srcs = self.source_refs();
        let mut taps = Vec::new();
        let mut tap_ends = Vec::with_capacity(vertices.len());
        let mut base = vec![T::zero(); vertices.len() * w];
        for (&v, row) in vertices.iter().zip(base.chunks_mut(w)) {
            let start = taps.len();
            self.plan.taps(v, &mut taps);
            self.plan.gather(&srcs, &taps[start..], row);
            tap_ends.push(taps.len());
        }
        let lifted = self.lift(&base, vertices.len());
        let (feat, refined) = match &self.refiner {
            Some(r) => {
                let (y, c) = r.forward_cached(&lifted, vertices.len());
                (y, Some(c))
            }
            None => (lifted, None),
        };

        let groups = self.groups();
        let gw = self.group_width();
        let width = self.width();
        let mut out = vec![T::zero(); n * groups * gw];
        let mut local = Vec::with_capacity(corners.len());
        for (i, c) in corners.iter().enumerate() {
            let g = i % groups;
            let mut loc = [0u32; 1 << MAX_DIM];
            let dst = &mut out[i * gw..(i + 1) * gw];
            for k in 0..c.n {
                let pos = vertices.binary_search(&c.idx[k]).expect("corner was collected");
                loc[k] = pos as u32;
                let row = &feat[pos * width + g * gw..pos * width + (g + 1) * gw];
                for (o, &v) in dst.iter_mut().zip(row) {
                    *o += c.w[k] * v;
                }
            }
            local.push(loc);
        }
        Ok((
            out,
            BranchCache {
                vertices,
                taps,
                tap_ends,
                base,
                refined,
                corners,
                local,
            },
        ))
    }

    pub fn forward(&self, coords: &[T], n: usize) -> Result<Vec<T>> {
        Ok(self.forward_cached(coords, n)?.0)
    }

    /// Accumulates gradients of the base structures and refiner for the
    /// upstream gradient `dy` (`n × groups·group_width`).
    pub fn backward(&mut self, cache: &BranchCache<T>, dy: &[T]) {
        let groups = self.groups();
        let gw = self.group_width();
        let width = self.width();
        let nv = cache.vertices.len();
        let mut dfeat = vec![T::zero(); nv * width];
        for (i, c) in cache.corners.iter().enumerate() {
            let g = i % groups;
            let src = &dy[i * gw..(i + 1) * gw];
            for k in 0..c.n {
                let pos = cache.local[i][k] as usize;
                let row = &mut dfeat[pos * width + g * gw..pos * width + (g + 1) * gw];
                for (d, &s) in row.iter_mut().zip(src) {
                    *d += c.w[k] * s;
                }
            }
        }
        let dlifted = match (&mut self.refiner, &cache.refined) {
            (Some(r), Some(c)) => r.backward(nv, c, &dfeat),
            _ => dfeat,
        };
        let bw = self.plan.base_width();
        let dbase = match self.pe {
            None => dlifted,
            Some(k) => {
                let mut db = vec![T::zero(); nv * bw];
                for ((x, dy), dx) in cache.base.chunks(bw).zip(dlifted.chunks(bw * 2 * k)).zip(db.chunks_mut(bw)) {
                    pe_backward_row(x, k, dy, dx);
                }
                db
            }
        };
        let mut grads: Vec<&mut [T]> = self.sources.iter_mut().map(|s| s.values_mut().grad_mut()).collect();
        let mut start = 0;
        for (v, &end) in cache.tap_ends.iter().enumerate() {
            self.plan.scatter(&cache.taps[start..end], &dbase[v * bw..(v + 1) * bw], &mut grads);
            start = end;
        }
    }

    /// Inference path that refines the corners of every query separately,
    /// with no sharing across the batch. This is the cost a model pays when
    /// the refined structure is not cached.
    pub fn forward_per_query(&self, coords: &[T], n: usize) -> Result<Vec<T>> {
        let corners = self.corners(coords, n)?;
        let groups = self.groups();
        let gw = self.group_width();
        let width = self.width();
        let mut out = vec![T::zero(); n * groups * gw];
        for (i, c) in corners.iter().enumerate() {
            let g = i % groups;
            let feat = self.vertex_features(&c.idx[..c.n]);
            let dst = &mut out[i * gw..(i + 1) * gw];
            for k in 0..c.n {
                for (o, &v) in dst.iter_mut().zip(&feat[k * width + g * gw..k * width + (g + 1) * gw]) {
                    *o += c.w[k] * v;
                }
            }
        }
        Ok(out)
    }

    pub fn all_finite(&self) -> Option<String> {
        let mut bad = None;
        self.visit("", &mut |name, t| {
            if bad.is_none() && !t.all_finite() {
                bad = Some(name);
            }
        });
        bad
    }
}

impl<T: Real> Parameters<T> for Branch<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        for (name, s) in self.plan.source_names().into_iter().zip(&self.sources) {
            f(join(prefix, &name), s.values());
        }
        if let Some(r) = &self.refiner {
            r.visit(&join(prefix, "refiner"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        for (name, s) in self.plan.source_names().into_iter().zip(self.sources.iter_mut()) {
            f(join(prefix, &name), s.values_mut());
        }
        if let Some(r) = &mut self.refiner {
            r.visit_mut(&join(prefix, "refiner"), f);
        }
    }
}
