use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Parameters, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for one parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
    pub cfg: AdamConfig,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize, cfg: AdamConfig) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
            cfg,
        }
    }
}

/// One bias-corrected Adam update. A non-finite gradient leaves both the
/// parameter and the state untouched.
pub fn adam_step<T: Real>(param: &mut Tensor<T>, grad: &[T], state: &mut AdamState<T>, lr: f64) -> Result<()> {
    if grad.len() != param.numel() || state.m.len() != param.numel() {
        return Err(Error::Dimension(format!(
            "adam: parameter {:?} with {} grads and {} moments",
            param.shape(),
            grad.len(),
            state.m.len()
        )));
    }
    if !(lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    crate::numerics::ops::check_finite(grad, "gradient")?;
    apply(param.data_mut(), grad, state, lr);
    Ok(())
}

fn apply<T: Real>(p: &mut [T], g: &[T], s: &mut AdamState<T>, lr: f64) {
    s.t += 1;
    let AdamConfig { beta1, beta2, eps } = s.cfg;
    let bc1 = 1.0 - beta1.powi(s.t as i32);
    let bc2 = 1.0 - beta2.powi(s.t as i32);
    let (b1, b2) = (T::lit(beta1), T::lit(beta2));
    let (ob1, ob2) = (T::one() - b1, T::one() - b2);
    let step = T::lit(lr / bc1);
    let inv_bc2 = T::lit(1.0 / bc2);
    let e = T::lit(eps);
    for i in 0..p.len() {
        let gi = g[i];
        s.m[i] = b1 * s.m[i] + ob1 * gi;
        s.v[i] = b2 * s.v[i] + ob2 * gi * gi;
        p[i] -= step * s.m[i] / ((s.v[i] * inv_bc2).sqrt() + e);
    }
}

/// Adam over every tensor of a model, in visiting order.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    cfg: AdamConfig,
    states: Vec<AdamState<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            states: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.states.first().map_or(0, |s| s.t)
    }

    /// Updates every parameter from its accumulated gradient. Checks all
    /// gradients first so a non-finite value leaves the whole model untouched.
    pub fn step<P: Parameters<T>>(&mut self, model: &mut P, lr: f64) -> Result<()> {
        let mut bad = None;
        model.visit("", &mut |name, t| {
            if bad.is_none() {
                if let Some(g) = t.grad() {
                    if g.iter().any(|v| !v.is_finite()) {
                        bad = Some(name);
                    }
                }
            }
        });
        if let Some(name) = bad {
            return Err(Error::Numeric(format!("non-finite gradient in {name}")));
        }
        if !(lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        let cfg = self.cfg;
        let states = &mut self.states;
        let mut idx = 0;
        model.visit_mut("", &mut |_, t| {
            if states.len() <= idx {
                states.push(AdamState::new(t.numel(), cfg));
            }
            let n = t.numel();
            let grad = t.grad().map(|g| g.to_vec()).unwrap_or_else(|| vec![T::zero(); n]);
            apply(t.data_mut(), &grad, &mut states[idx], lr);
            idx += 1;
        });
        Ok(())
    }
}

/// Cosine annealing from `base` to `floor` over `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub floor: f64,
    pub total_steps: usize,
}

impl LrSchedule {
    /// Floor two orders of magnitude below the base rate.
    pub fn new(base: f64, total_steps: usize) -> Self {
        Self::with_floor_ratio(base, 0.01, total_steps)
    }

    pub fn with_floor_ratio(base: f64, ratio: f64, total_steps: usize) -> Self {
        Self {
            base,
            floor: base * ratio,
            total_steps,
        }
    }
}

/// `η(t) = η_min + (η0 − η_min)·(1 + cos(π·t/T))/2`, clamped to `η_min` past `T`; exactly `η0` at `t = 0`.
pub fn cosine_lr(t: usize, sched: &LrSchedule) -> f64 {
    if t == 0 {
        return sched.base;
    }
    if t >= sched.total_steps {
        return sched.floor;
    }
    let phase = std::f64::consts::PI * t as f64 / sched.total_steps as f64;
    sched.floor + (sched.base - sched.floor) * (1.0 + phase.cos()) / 2.0
}
