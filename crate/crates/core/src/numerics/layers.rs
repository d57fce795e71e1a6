use rand::Rng;

use crate::numerics::ops::{linear_bwd, linear_fwd, rmsnorm_bwd, rmsnorm_fwd};
use crate::numerics::{Real, Tensor};

/// Anything that owns trainable tensors. Visiting order is stable and defines
/// the optimizer-state and checkpoint layout.
pub trait Parameters<T: Real> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.numel());
        n
    }

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, t| t.zero_grad());
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Clone, Debug)]
pub struct Linear<T> {
    /// `[in, out]`
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

impl<T: Real> Linear<T> {
    /// Weights uniform in `±1/sqrt(fan_in)`, zero bias.
    pub fn init<R: Rng>(din: usize, dout: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (din as f64).sqrt();
        Self {
            weight: Tensor::from_fn(vec![din, dout], |_| T::lit(rng.random_range(-bound..=bound)))
                .with_grad(),
            bias: Tensor::zeros(vec![dout]).with_grad(),
        }
    }

    pub fn zeros(din: usize, dout: usize) -> Self {
        Self {
            weight: Tensor::zeros(vec![din, dout]).with_grad(),
            bias: Tensor::zeros(vec![dout]).with_grad(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &[T], n: usize) -> Vec<T> {
        linear_fwd(x, n, self.weight.data(), self.bias.data(), self.in_dim(), self.out_dim())
    }

    pub fn backward(&mut self, x: &[T], n: usize, dy: &[T]) -> Vec<T> {
        let (din, dout) = (self.in_dim(), self.out_dim());
        let mut dw = vec![T::zero(); din * dout];
        let mut db = vec![T::zero(); dout];
        let dx = linear_bwd(x, n, self.weight.data(), dy, din, dout, &mut dw, &mut db);
        self.weight.accumulate_grad(&dw);
        self.bias.accumulate_grad(&db);
        dx
    }
}

impl<T: Real> Parameters<T> for Linear<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Clone, Debug)]
pub struct RmsNorm<T> {
    pub gain: Tensor<T>,
    pub eps: T,
}

impl<T: Real> RmsNorm<T> {
    pub fn new(width: usize, eps: f64) -> Self {
        Self {
            gain: Tensor::from_fn(vec![width], |_| T::one()).with_grad(),
            eps: T::lit(eps),
        }
    }
}

/// Pre-normalized gated block:
/// `y = x + W_out( ReLU(W_a·n(x) + b_a) ⊙ (W_b·n(x) + b_b) ) + b_out`, `n = RMSNorm`.
#[derive(Clone, Debug)]
pub struct ReGluBlock<T> {
    pub norm: RmsNorm<T>,
    pub gate: Linear<T>,
    pub value: Linear<T>,
    pub out: Linear<T>,
}

/// Activations kept for the backward pass of one block.
pub struct BlockCache<T> {
    normed: Vec<T>,
    inv_rms: Vec<T>,
    gate: Vec<T>,
    value: Vec<T>,
    gated: Vec<T>,
}

impl<T: Real> ReGluBlock<T> {
    /// Output projection starts at zero so the block is the identity at init.
    pub fn init<R: Rng>(width: usize, hidden: usize, eps: f64, rng: &mut R) -> Self {
        Self {
            norm: RmsNorm::new(width, eps),
            gate: Linear::init(width, hidden, rng),
            value: Linear::init(width, hidden, rng),
            out: Linear::zeros(hidden, width),
        }
    }

    pub fn zeros(width: usize, hidden: usize, eps: f64) -> Self {
        Self {
            norm: RmsNorm::new(width, eps),
            gate: Linear::zeros(width, hidden),
            value: Linear::zeros(width, hidden),
            out: Linear::zeros(hidden, width),
        }
    }

    pub fn width(&self) -> usize {
        self.gate.in_dim()
    }

    pub fn hidden(&self) -> usize {
        self.gate.out_dim()
    }

    pub fn forward(&self, x: &[T], n: usize) -> Vec<T> {
        self.forward_cached(x, n).0
    }

    pub fn forward_cached(&self, x: &[T], n: usize) -> (Vec<T>, BlockCache<T>) {
        let w = self.width();
        let (normed, inv_rms) = rmsnorm_fwd(x, w, self.norm.gain.data(), self.norm.eps);
        let gate = self.gate.forward(&normed, n);
        let value = self.value.forward(&normed, n);
        let gated: Vec<T> = gate
            .iter()
            .zip(&value)
            .map(|(&a, &b)| a.max(T::zero()) * b)
            .collect();
        let mut y = self.out.forward(&gated, n);
        for (o, &xi) in y.iter_mut().zip(x) {
            *o += xi;
        }
        (
            y,
            BlockCache {
                normed,
                inv_rms,
                gate,
                value,
                gated,
            },
        )
    }

    pub fn backward(&mut self, x: &[T], n: usize, cache: &BlockCache<T>, dy: &[T]) -> Vec<T> {
        let w = self.width();
        let dgated = self.out.backward(&cache.gated, n, dy);
        let mut dgate = Vec::with_capacity(dgated.len());
        let mut dvalue = Vec::with_capacity(dgated.len());
        for ((&dg, &a), &b) in dgated.iter().zip(&cache.gate).zip(&cache.value) {
            if a > T::zero() {
                dgate.push(dg * b);
                dvalue.push(dg * a);
            } else {
                dgate.push(T::zero());
                dvalue.push(T::zero());
            }
        }
        let mut dnormed = self.gate.backward(&cache.normed, n, &dgate);
        let dn2 = self.value.backward(&cache.normed, n, &dvalue);
        for (a, b) in dnormed.iter_mut().zip(&dn2) {
            *a += *b;
        }
        let mut dgain = vec![T::zero(); w];
        let mut dx = rmsnorm_bwd(x, w, self.norm.gain.data(), &cache.inv_rms, &dnormed, &mut dgain);
        self.norm.gain.accumulate_grad(&dgain);
        for (a, &b) in dx.iter_mut().zip(dy) {
            *a += b;
        }
        dx
    }

    /// Parameter count: `w + 2·(w·h + h) + (h·w + w)`.
    pub fn count(width: usize, hidden: usize) -> usize {
        width + 2 * (width * hidden + hidden) + (hidden * width + width)
    }
}

impl<T: Real> Parameters<T> for ReGluBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(join(prefix, "norm.gain"), &self.norm.gain);
        self.gate.visit(&join(prefix, "gate"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "norm.gain"), &mut self.norm.gain);
        self.gate.visit_mut(&join(prefix, "gate"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

/// ReLU MLP with a linear output head.
#[derive(Clone, Debug)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
}

pub struct MlpCache<T> {
    /// Input of every layer (post-activation for all but the first).
    inputs: Vec<Vec<T>>,
    /// Pre-activation of every hidden layer.
    pre: Vec<Vec<T>>,
}

impl<T: Real> Mlp<T> {
    /// `layers` linear maps: `din → hidden → … → hidden → dout`; one layer means `din → dout`.
    pub fn init<R: Rng>(din: usize, hidden: usize, dout: usize, layers: usize, rng: &mut R) -> Self {
        let layers = layers.max(1);
        let mut out = Vec::with_capacity(layers);
        for i in 0..layers {
            let a = if i == 0 { din } else { hidden };
            let b = if i + 1 == layers { dout } else { hidden };
            out.push(Linear::init(a, b, rng));
        }
        Self { layers: out }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn forward(&self, x: &[T], n: usize) -> Vec<T> {
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h, n);
            if i < last {
                h.iter_mut().for_each(|v| *v = v.max(T::zero()));
            }
        }
        h
    }

    pub fn forward_cached(&self, x: &[T], n: usize) -> (Vec<T>, MlpCache<T>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len().saturating_sub(1));
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let y = layer.forward(&h, n);
            inputs.push(h);
            if i < last {
                h = y.iter().map(|v| v.max(T::zero())).collect();
                pre.push(y);
            } else {
                h = y;
            }
        }
        (h, MlpCache { inputs, pre })
    }

    pub fn backward(&mut self, n: usize, cache: &MlpCache<T>, dy: &[T]) -> Vec<T> {
        let mut d = dy.to_vec();
        for i in (0..self.layers.len()).rev() {
            if i < self.layers.len() - 1 {
                for (g, &p) in d.iter_mut().zip(&cache.pre[i]) {
                    if p <= T::zero() {
                        *g = T::zero();
                    }
                }
            }
            d = self.layers[i].backward(&cache.inputs[i], n, &d);
        }
        d
    }
}

impl<T: Real> Parameters<T> for Mlp<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}
