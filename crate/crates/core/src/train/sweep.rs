use std::fmt::Write as _;

use serde::Serialize;

use super::config::TrainConfig;
use super::run::train;
use crate::augment::{cell_spacing, NoiseSpec, Strategy};
use crate::error::{Error, Result};
use crate::eval::{cap_psnr, eval_conditional, EvalOptions};
use crate::field_data::{normalize_dataset, EnsembleDataset};
use crate::model::{DrrNet, ModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub variant: String,
    pub tau: f64,
    pub sigma: f64,
    pub k: usize,
    pub seed: u64,
    pub rel_l2: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,tau,sigma,k,seed,rel_l2,psnr,ssim\n");
        let opt = |v: Option<f64>| v.map_or_else(|| "-".into(), |x| format!("{x}"));
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.variant,
                r.tau,
                r.sigma,
                r.k,
                r.seed,
                opt(r.rel_l2),
                opt(r.psnr.map(cap_psnr)),
                opt(r.ssim)
            )
            .unwrap();
        }
        out
    }
}

/// Trains one model per `(τ, seed)` with the threshold applied to the
/// variant's noise and reports mean unseen-member fidelity. VP-S varies the
/// spatial threshold; VP-C and VP-SC vary the conditional one, VP-SC keeping
/// the spatial noise from `base` (one lattice spacing when unset). A failing
/// cell is recorded and the sweep continues.
pub fn sweep_thresholds(
    ds: &EnsembleDataset,
    model: &ModelConfig,
    base: &TrainConfig,
    taus: &[f64],
    variant: Strategy,
    seeds: &[u64],
) -> Result<SweepReport> {
    if taus.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one threshold and one seed".into()));
    }
    if taus.iter().any(|&t| !(t > 0.0)) || taus.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config(format!("thresholds must be positive and sorted, got {taus:?}")));
    }
    if !matches!(variant, Strategy::VpS | Strategy::VpC | Strategy::VpSc) {
        return Err(Error::Config(format!("sweep variant must be vp-s, vp-c or vp-sc, got {}", variant.label())));
    }
    let norm = normalize_dataset(ds)?;
    let mut rows = Vec::with_capacity(taus.len() * seeds.len());
    for &tau in taus {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.augment.strategy = variant;
            let swept = if variant == Strategy::VpS { base.augment.spatial } else { base.augment.conditional };
            let noise = NoiseSpec {
                tau,
                sigma: None,
                mode: swept.map(|n| n.mode).unwrap_or_default(),
            };
            match variant {
                Strategy::VpS => cfg.augment.spatial = Some(noise),
                Strategy::VpC => {
                    cfg.augment.conditional = Some(noise);
                    cfg.augment.spatial = None;
                }
                _ => {
                    cfg.augment.conditional = Some(noise);
                    cfg.augment.spatial = Some(
                        base.augment
                            .spatial
                            .unwrap_or(NoiseSpec::radial(cell_spacing(&norm.resolution))),
                    );
                }
            }
            let cell = || -> Result<(f64, f64, Option<f64>)> {
                let mut net = DrrNet::<f32>::init(model, seed)?;
                train(&mut net, &norm, &cfg, None)?;
                let rep = eval_conditional(&net, &norm.stats, ds, &EvalOptions::default())?.report;
                let s = &rep.sections[0];
                Ok((s.mean_rel_l2, s.mean_psnr, s.mean_ssim))
            };
            let row = SweepRow {
                variant: variant.label().into(),
                tau,
                sigma: noise.sigma(),
                k: cfg.augment.k,
                seed,
                rel_l2: None,
                psnr: None,
                ssim: None,
                error: None,
            };
            rows.push(match cell() {
                Ok((r, p, s)) => SweepRow {
                    rel_l2: Some(r),
                    psnr: Some(p),
                    ssim: s,
                    ..row
                },
                Err(e) => {
                    log::warn!("sweep cell tau {tau} seed {seed} failed: {e}");
                    SweepRow {
                        error: Some(e.to_string()),
                        ..row
                    }
                }
            });
        }
    }
    Ok(SweepReport { rows })
}
