use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Written in place of an infinite PSNR.
pub const PSNR_CAP: f64 = 999.0;

fn check(pred: &[f32], gt: &[f32]) -> Result<()> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(Error::Dimension(format!("metric inputs of length {} and {}", pred.len(), gt.len())));
    }
    Ok(())
}

/// `‖pred − gt‖ / ‖gt‖`; NaN when `gt` is all zeros.
pub fn rel_l2(pred: &[f32], gt: &[f32]) -> Result<f64> {
    check(pred, gt)?;
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (&p, &g) in pred.iter().zip(gt) {
        num += (p as f64 - g as f64).powi(2);
        den += (g as f64).powi(2);
    }
    Ok(if den == 0.0 { f64::NAN } else { (num / den).sqrt() })
}

/// Peak-to-peak of `gt`; a constant member falls back to 1.
pub fn dynamic_range(gt: &[f32]) -> f64 {
    let (lo, hi) = gt
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v as f64), b.max(v as f64)));
    if hi > lo {
        hi - lo
    } else {
        1.0
    }
}

pub fn mse(pred: &[f32], gt: &[f32]) -> Result<f64> {
    check(pred, gt)?;
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(&p, &g)| (p as f64 - g as f64).powi(2))
        .sum::<f64>()
        / gt.len() as f64)
}

pub fn psnr_from_mse(mse: f64, range: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (range * range / mse).log10()
    }
}

/// `10 log10(R² / MSE)` with `R` the range of `gt`; `+∞` when exact.
pub fn psnr(pred: &[f32], gt: &[f32]) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, gt)?, dynamic_range(gt)))
}

pub fn cap_psnr(p: f64) -> f64 {
    if p.is_infinite() && p > 0.0 {
        PSNR_CAP
    } else {
        p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SsimWindow {
    Gaussian { size: usize, sigma: f64 },
    Uniform { size: usize },
}

impl Default for SsimWindow {
    fn default() -> Self {
        Self::Gaussian { size: 11, sigma: 1.5 }
    }
}

impl SsimWindow {
    pub fn size(&self) -> usize {
        match *self {
            Self::Gaussian { size, .. } | Self::Uniform { size } => size,
        }
    }

    /// Normalized 1D taps; the d-dimensional window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let w: Vec<f64> = match *self {
            Self::Gaussian { size, sigma } => {
                let half = (size / 2) as f64;
                (0..size).map(|i| (-0.5 * ((i as f64 - half) / sigma).powi(2)).exp()).collect()
            }
            Self::Uniform { size } => vec![1.0; size],
        };
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    }
}

pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Separable valid-mode filter along every axis.
fn filter_valid(data: &[f64], shape: &[usize], taps: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let k = taps.len();
    let mut cur = data.to_vec();
    let mut cur_shape = shape.to_vec();
    for a in 0..shape.len() {
        let inner: usize = cur_shape[a + 1..].iter().product();
        let outer: usize = cur_shape[..a].iter().product();
        let n = cur_shape[a];
        let m = n - k + 1;
        let mut next = vec![0.0; outer * m * inner];
        for o in 0..outer {
            for i in 0..m {
                let dst = &mut next[(o * m + i) * inner..(o * m + i + 1) * inner];
                for (t, &w) in taps.iter().enumerate() {
                    let src = &cur[(o * n + i + t) * inner..(o * n + i + t + 1) * inner];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            }
        }
        cur = next;
        cur_shape[a] = m;
    }
    (cur, cur_shape)
}

/// Mean local SSIM over windows that fit entirely inside the grid. `range`
/// defaults to the dynamic range of `gt`.
pub fn ssim(pred: &[f32], gt: &[f32], shape: &[usize], window: SsimWindow, range: Option<f64>) -> Result<f64> {
    check(pred, gt)?;
    if shape.iter().product::<usize>() != gt.len() {
        return Err(Error::Dimension(format!("shape {shape:?} does not cover {} values", gt.len())));
    }
    let k = window.size();
    if k == 0 || k % 2 == 0 {
        return Err(Error::Config(format!("SSIM window size {k} must be odd")));
    }
    if let Some(&r) = shape.iter().find(|&&r| r < k) {
        return Err(Error::Input(format!("SSIM window {k} does not fit an extent of {r}")));
    }
    let r = range.unwrap_or_else(|| dynamic_range(gt));
    let c1 = (SSIM_K1 * r).powi(2);
    let c2 = (SSIM_K2 * r).powi(2);
    let taps = window.taps();
    let x: Vec<f64> = pred.iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = gt.iter().map(|&v| v as f64).collect();
    let prod = |f: &dyn Fn(usize) -> f64| (0..x.len()).map(f).collect::<Vec<f64>>();
    let (ux, _) = filter_valid(&x, shape, &taps);
    let (uy, _) = filter_valid(&y, shape, &taps);
    let (uxx, _) = filter_valid(&prod(&|i| x[i] * x[i]), shape, &taps);
    let (uyy, _) = filter_valid(&prod(&|i| y[i] * y[i]), shape, &taps);
    let (uxy, _) = filter_valid(&prod(&|i| x[i] * y[i]), shape, &taps);
    let total: f64 = (0..ux.len())
        .map(|i| {
            let vx = uxx[i] - ux[i] * ux[i];
            let vy = uyy[i] - uy[i] * uy[i];
            let vxy = uxy[i] - ux[i] * uy[i];
            ((2.0 * ux[i] * uy[i] + c1) * (2.0 * vxy + c2))
                / ((ux[i] * ux[i] + uy[i] * uy[i] + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / ux.len() as f64)
}
