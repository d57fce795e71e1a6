use rand::Rng;

use crate::embedding::{FeatureGrid, UnifiedStructure};
use crate::error::{Error, Result};
use crate::numerics::{join, BlockCache, Parameters, ReGluBlock, Real, Tensor};

/// Point-wise refiner: a chain of residual gated blocks of constant width.
/// Because every block carries its own skip, the chain maps a unified feature
/// straight to its refined value and the learned offset is `forward(x) − x`.
#[derive(Clone, Debug)]
pub struct RefinerStack<T> {
    pub blocks: Vec<ReGluBlock<T>>,
    width: usize,
}

pub struct StackCache<T> {
    inputs: Vec<Vec<T>>,
    blocks: Vec<BlockCache<T>>,
}

impl<T: Real> RefinerStack<T> {
    pub fn init<R: Rng>(width: usize, hidden: usize, depth: usize, eps: f64, rng: &mut R) -> Self {
        Self {
            blocks: (0..depth).map(|_| ReGluBlock::init(width, hidden, eps, rng)).collect(),
            width,
        }
    }

    pub fn zeros(width: usize, hidden: usize, depth: usize, eps: f64) -> Self {
        Self {
            blocks: (0..depth).map(|_| ReGluBlock::zeros(width, hidden, eps)).collect(),
            width,
        }
    }

    pub fn from_blocks(blocks: Vec<ReGluBlock<T>>) -> Result<Self> {
        let width = blocks
            .first()
            .map(|b| b.width())
            .ok_or_else(|| Error::Config("refiner needs at least one block".into()))?;
        if blocks.iter().any(|b| b.width() != width) {
            return Err(Error::Dimension("refiner blocks must share one width".into()));
        }
        Ok(Self { blocks, width })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn hidden(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.hidden())
    }

    /// Refined features for `n` rows of width `width`.
    pub fn forward(&self, x: &[T], n: usize) -> Vec<T> {
        let mut h = x.to_vec();
        for b in &self.blocks {
            h = b.forward(&h, n);
        }
        h
    }

    pub fn forward_cached(&self, x: &[T], n: usize) -> (Vec<T>, StackCache<T>) {
        let mut inputs = Vec::with_capacity(self.blocks.len());
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = x.to_vec();
        for b in &self.blocks {
            let (y, c) = b.forward_cached(&h, n);
            inputs.push(std::mem::replace(&mut h, y));
            caches.push(c);
        }
        (
            h,
            StackCache {
                inputs,
                blocks: caches,
            },
        )
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, n: usize, cache: &StackCache<T>, dy: &[T]) -> Vec<T> {
        let mut d = dy.to_vec();
        for (i, b) in self.blocks.iter_mut().enumerate().rev() {
            d = b.backward(&cache.inputs[i], n, &cache.blocks[i], &d);
        }
        d
    }

    pub fn count(width: usize, hidden: usize, depth: usize) -> usize {
        depth * ReGluBlock::<T>::count(width, hidden)
    }
}

impl<T: Real> Parameters<T> for RefinerStack<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block{i}")), f);
        }
    }
}

/// Applies the refiner to every vertex of a unified structure.
pub fn refine_structure<T: Real>(unified: &UnifiedStructure<T>, refiner: &RefinerStack<T>) -> Result<UnifiedStructure<T>> {
    let g = &unified.grid;
    if g.channels() != refiner.width() {
        return Err(Error::Dimension(format!(
            "structure width {} does not match refiner width {}",
            g.channels(),
            refiner.width()
        )));
    }
    let data = refiner.forward(g.data(), g.num_vertices());
    Ok(UnifiedStructure {
        grid: FeatureGrid::new(g.resolution().to_vec(), g.channels(), data)?,
        manifest: unified.manifest.clone(),
    })
}
