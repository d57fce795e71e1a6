use std::path::PathBuf;
use std::time::Instant;

use super::config::TrainConfig;
use super::record::{EvalRecord, StepRecord, TrainLog};
use crate::augment::Augmenter;
use crate::error::{Error, Result};
use crate::eval::{psnr, rel_l2};
use crate::field_data::{NormalizedDataset, Sampler};
use crate::io::{save_model, ArtifactMeta};
use crate::model::DrrNet;
use crate::numerics::{cosine_lr, l2_loss, Adam, AdamConfig, LrSchedule, Parameters};

/// Where the periodic last-good checkpoint goes.
#[derive(Clone, Debug)]
pub struct Checkpointing {
    pub path: PathBuf,
    pub meta: ArtifactMeta,
}

fn clip_gradients(model: &mut DrrNet<f32>, max_norm: f64) {
    let mut sq = 0.0f64;
    model.visit("", &mut |_, t| {
        if let Some(g) = t.grad() {
            sq += g.iter().map(|&v| (v as f64).powi(2)).sum::<f64>();
        }
    });
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        model.visit_mut("", &mut |_, t| t.grad_mut().iter_mut().for_each(|g| *g *= s));
    }
}

/// Mean normalized-space PSNR and Rel L2 over full lattice reconstructions.
pub fn held_out_fidelity(model: &DrrNet<f32>, ds: &NormalizedDataset, members: &[usize]) -> Result<(f64, f64)> {
    let x = ds.lattice_coords();
    let n = ds.num_vertices();
    let (mut p, mut r) = (0.0, 0.0);
    for &m in members {
        let c: Vec<f32> = ds.members[m].condition.repeat(n);
        let y = model.forward(&x, &c, n)?;
        p += psnr(&y, &ds.members[m].values)?;
        r += rel_l2(&y, &ds.members[m].values)?;
    }
    Ok((p / members.len() as f64, r / members.len() as f64))
}

/// Sample, augment, lazy forward, L2, backward, Adam with cosine decay.
/// Deterministic for a fixed seed.
pub fn train(
    model: &mut DrrNet<f32>,
    ds: &NormalizedDataset,
    cfg: &TrainConfig,
    checkpoint: Option<&Checkpointing>,
) -> Result<TrainLog> {
    cfg.validate()?;
    if ds.dim() != model.dim_x() || ds.dim_c() != model.dim_c() || ds.channels != model.out_dim() {
        return Err(Error::Dimension(format!(
            "model maps {}D x {} parameters to {} channels, dataset is {}D x {} to {}",
            model.dim_x(),
            model.dim_c(),
            model.out_dim(),
            ds.dim(),
            ds.dim_c(),
            ds.channels
        )));
    }
    let total = cfg.total_steps(ds.train.len(), ds.num_vertices());
    let sched = LrSchedule::with_floor_ratio(cfg.lr, cfg.lr_floor_ratio, total);
    let mut sampler = Sampler::new(ds, cfg.sampler_config())?;
    let mut augmenter = Augmenter::new(ds, cfg.augment.clone(), cfg.seed)?;
    let mut adam = Adam::new(AdamConfig::default());
    let mut log = TrainLog::default();
    let mut last_good: Option<PathBuf> = None;
    let start = Instant::now();
    log::info!("training {total} steps, batch {} x {}", cfg.n_c, cfg.n_x);

    for step in 0..total {
        let t0 = Instant::now();
        let mut batch = sampler.sample(ds);
        augmenter.apply(&mut batch, ds);
        let n = batch.len();
        let (pred, cache) = model.forward_cached(&batch.x, &batch.c, n)?;
        let (loss, dy) = l2_loss(&pred, &batch.v, n)?;
        let diverged = |reason: String| Error::Diverged {
            step,
            reason,
            last_good: last_good.clone(),
        };
        if !loss.is_finite() {
            return Err(diverged(format!("loss is {loss}")));
        }
        model.zero_grad();
        model.backward(&cache, &dy);
        if let Some(c) = cfg.grad_clip {
            clip_gradients(model, c);
        }
        let lr = cosine_lr(step, &sched);
        adam.step(model, lr).map_err(|e| diverged(e.to_string()))?;
        if let Some(name) = model.first_non_finite() {
            return Err(diverged(format!("parameter {name} became non-finite")));
        }
        log.steps.push(StepRecord {
            step,
            loss: loss as f64,
            lr,
            seconds: t0.elapsed().as_secs_f64(),
        });
        let done = step + 1;
        if cfg.eval_every > 0 && done % cfg.eval_every == 0 && !ds.test.is_empty() {
            let (psnr, rel_l2) = held_out_fidelity(model, ds, &ds.test)?;
            log::info!("step {done}: loss {loss:.3e}, held-out psnr {psnr:.2} dB");
            log.evals.push(EvalRecord { step, psnr, rel_l2 });
        }
        if let Some(ck) = checkpoint {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
                save_model(model, &ck.meta, &ck.path)?;
                last_good = Some(ck.path.clone());
            }
        }
        if done % 500 == 0 {
            log::debug!("step {done}/{total}: loss {loss:.4e}, lr {lr:.3e}");
        }
    }
    log.finish(start.elapsed().as_secs_f64());
    Ok(log)
}
