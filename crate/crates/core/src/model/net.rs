use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::{FeatureGrid, UnifyPlan};
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::numerics::{join, Mlp, MlpCache, Parameters, Real, Tensor};
use crate::refiner::{Branch, BranchCache, RefinerStack};

/// Anything that maps batched `(x, c)` to predicted values in normalized space.
pub trait FieldPredictor: Send + Sync {
    fn dim_x(&self) -> usize;
    fn dim_c(&self) -> usize;
    fn out_dim(&self) -> usize;
    /// `x` is `n × dim_x` in `[-1, 1]`, `c` is `n × dim_c` in `[0, 1]`.
    fn predict(&self, x: &[f32], c: &[f32], n: usize) -> Result<Vec<f32>>;
}

/// Spatial encoder, optional condition encoder, concatenation and decoder.
#[derive(Clone, Debug)]
pub struct DrrNet<T> {
    config: ModelConfig,
    pub spatial: Branch<T>,
    pub condition: Option<Branch<T>>,
    pub decoder: Mlp<T>,
}

pub struct NetCache<T> {
    spatial: BranchCache<T>,
    condition: Option<BranchCache<T>>,
    decoder: MlpCache<T>,
    n: usize,
}

impl<T: Real> DrrNet<T> {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let range = config.init.embedding_range;
        let eps = config.init.rmsnorm_eps;

        let s = &config.spatial;
        let levels = config.spatial_levels()?;
        let sources = levels
            .iter()
            .map(|r| FeatureGrid::random(r.clone(), s.channels, range, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let plan = UnifyPlan::spatial(
            &levels.iter().map(|r| (r.clone(), s.channels)).collect::<Vec<_>>(),
            config.spatial_target()?.as_deref(),
        )?;
        let width = config.spatial_width();
        let refiner = (config.flags.spatial_refiner && s.refiner.depth > 0)
            .then(|| RefinerStack::init(width, s.refiner.hidden(width), s.refiner.depth, eps, &mut rng));
        let spatial = Branch::new(sources, plan, config.spatial_pe(), refiner)?;

        let condition = match &config.condition {
            None => None,
            Some(c) => {
                let mut lines = Vec::with_capacity(c.params * c.levels.len());
                for _ in 0..c.params {
                    for &r in &c.levels {
                        lines.push(FeatureGrid::random(vec![r], c.channels, range, &mut rng)?);
                    }
                }
                let layout = vec![c.levels.iter().map(|&r| (r, c.channels)).collect::<Vec<_>>(); c.params];
                let plan = UnifyPlan::condition(&layout, config.condition_global())?;
                let width = config.condition_width();
                let refiner = (config.flags.condition_refiner && c.refiner.depth > 0)
                    .then(|| RefinerStack::init(width, c.refiner.hidden(width), c.refiner.depth, eps, &mut rng));
                Some(Branch::new(lines, plan, config.condition_pe(), refiner)?)
            }
        };
        let d = &config.decoder;
        let decoder = Mlp::init(config.decoder_in(), d.hidden, d.out_dim, d.layers, &mut rng);
        Ok(Self {
            config: config.clone(),
            spatial,
            condition,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dim_x(&self) -> usize {
        self.config.dim_x()
    }

    pub fn dim_c(&self) -> usize {
        self.config.dim_c()
    }

    pub fn out_dim(&self) -> usize {
        self.decoder.out_dim()
    }

    pub fn count_params(&self) -> usize {
        self.param_count()
    }

    /// Checks shapes and NaNs and maps conditions from `[0, 1]` to line coordinates.
    pub(crate) fn prepare(&self, x: &[T], c: &[T], n: usize) -> Result<Vec<T>> {
        prepare_inputs(self.dim_x(), self.dim_c(), x, c, n)
    }

    /// Fused encoder features, `n × decoder_in`.
    fn encode(&self, x: &[T], c: &[T], n: usize) -> Result<(Vec<T>, BranchCache<T>, Option<BranchCache<T>>)> {
        let cc = self.prepare(x, c, n)?;
        let (fs, sc) = self.spatial.forward_cached(x, n)?;
        let (fused, cond_cache) = match &self.condition {
            None => (fs, None),
            Some(b) => {
                let (fc, ccache) = b.forward_cached(&cc, n)?;
                (concat_rows(&fs, self.spatial.width(), &fc, b.width(), n), Some(ccache))
            }
        };
        Ok((fused, sc, cond_cache))
    }

    pub fn forward(&self, x: &[T], c: &[T], n: usize) -> Result<Vec<T>> {
        let (fused, _, _) = self.encode(x, c, n)?;
        Ok(self.decoder.forward(&fused, n))
    }

    pub fn forward_cached(&self, x: &[T], c: &[T], n: usize) -> Result<(Vec<T>, NetCache<T>)> {
        let (fused, spatial, condition) = self.encode(x, c, n)?;
        let (y, decoder) = self.decoder.forward_cached(&fused, n);
        Ok((
            y,
            NetCache {
                spatial,
                condition,
                decoder,
                n,
            },
        ))
    }

    /// Accumulates gradients of every parameter for upstream gradient `dy` (`n × out_dim`).
    pub fn backward(&mut self, cache: &NetCache<T>, dy: &[T]) {
        let n = cache.n;
        let dfused = self.decoder.backward(n, &cache.decoder, dy);
        let ws = self.spatial.width();
        match (&mut self.condition, &cache.condition) {
            (Some(b), Some(cc)) => {
                let wc = b.width();
                let (ds, dc) = split_rows(&dfused, ws, wc, n);
                self.spatial.backward(&cache.spatial, &ds);
                b.backward(cc, &dc);
            }
            _ => self.spatial.backward(&cache.spatial, &dfused),
        }
    }

    /// Forward pass that refines the corners of every query independently, as
    /// an unbaked model would at inference. Matches [`forward`](Self::forward).
    pub fn forward_per_query(&self, x: &[T], c: &[T], n: usize) -> Result<Vec<T>> {
        let cc = self.prepare(x, c, n)?;
        let fs = self.spatial.forward_per_query(x, n)?;
        let fused = match &self.condition {
            None => fs,
            Some(b) => {
                let fc = b.forward_per_query(&cc, n)?;
                concat_rows(&fs, self.spatial.width(), &fc, b.width(), n)
            }
        };
        Ok(self.decoder.forward(&fused, n))
    }

    /// Name of the first parameter tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        let mut bad = None;
        self.visit("", &mut |name, t| {
            if bad.is_none() && !t.all_finite() {
                bad = Some(name);
            }
        });
        bad
    }

    pub fn cast<U: Real>(&self) -> DrrNet<U> {
        let mut out = DrrNet::<U>::init(&self.config, 0).expect("config already validated");
        let mut src = Vec::new();
        self.visit("", &mut |_, t| src.push(t.cast::<U>()));
        let mut it = src.into_iter();
        out.visit_mut("", &mut |_, t| *t = it.next().unwrap());
        out
    }
}

pub(crate) fn prepare_inputs<T: Real>(dx: usize, dc: usize, x: &[T], c: &[T], n: usize) -> Result<Vec<T>> {
    if x.len() != n * dx {
        return Err(Error::Dimension(format!("{} coordinates for {n} points of rank {dx}", x.len())));
    }
    if c.len() != n * dc {
        return Err(Error::Dimension(format!("{} condition values for {n} points of rank {dc}", c.len())));
    }
    if x.iter().chain(c).any(|v| v.is_nan()) {
        return Err(Error::Input("NaN in query coordinates or conditions".into()));
    }
    let two = T::lit(2.0);
    Ok(c.iter().map(|&v| two * v.max(T::zero()).min(T::one()) - T::one()).collect())
}

pub(crate) fn concat_rows<T: Real>(a: &[T], wa: usize, b: &[T], wb: usize, n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n * (wa + wb));
    for i in 0..n {
        out.extend_from_slice(&a[i * wa..(i + 1) * wa]);
        out.extend_from_slice(&b[i * wb..(i + 1) * wb]);
    }
    out
}

fn split_rows<T: Real>(x: &[T], wa: usize, wb: usize, n: usize) -> (Vec<T>, Vec<T>) {
    let mut a = Vec::with_capacity(n * wa);
    let mut b = Vec::with_capacity(n * wb);
    for row in x.chunks(wa + wb) {
        a.extend_from_slice(&row[..wa]);
        b.extend_from_slice(&row[wa..]);
    }
    (a, b)
}

impl<T: Real> Parameters<T> for DrrNet<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.spatial.visit(&join(prefix, "spatial"), f);
        if let Some(c) = &self.condition {
            c.visit(&join(prefix, "condition"), f);
        }
        self.decoder.visit(&join(prefix, "decoder"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.spatial.visit_mut(&join(prefix, "spatial"), f);
        if let Some(c) = &mut self.condition {
            c.visit_mut(&join(prefix, "condition"), f);
        }
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
    }
}

impl FieldPredictor for DrrNet<f32> {
    fn dim_x(&self) -> usize {
        self.config.dim_x()
    }

    fn dim_c(&self) -> usize {
        self.config.dim_c()
    }

    fn out_dim(&self) -> usize {
        self.decoder.out_dim()
    }

    fn predict(&self, x: &[f32], c: &[f32], n: usize) -> Result<Vec<f32>> {
        self.forward(x, c, n)
    }
}
