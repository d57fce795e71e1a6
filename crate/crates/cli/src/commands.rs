use std::path::{Path, PathBuf};

use drr_core::error::{Error, Result};
use drr_core::eval::{benchmark_inference, eval_conditional, eval_spatio_conditional, EvalOptions};
use drr_core::field_data::{
    load_dataset, normalize_dataset, random_conditions, save_dataset, synth_ensemble, NormalizedDataset,
};
use drr_core::io::{load_checkpoint, load_config, save_baked, save_model, write_atomic, Artifact, ArtifactMeta};
use drr_core::model::{bake, estimate_flops, BakedStructure, DrrNet, FieldPredictor, QueryMode};
use drr_core::train::{sweep_thresholds, train, Checkpointing};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::args::{Cli, Command, Task};
use crate::configs::{resolve, EvalFile, GenConfig, SweepFile, TrainFile};

/// Exit code, one-line summary and the machine-readable result file.
#[derive(Debug)]
pub struct CommandOutcome {
    pub code: i32,
    pub summary: String,
    pub result: Option<PathBuf>,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Input(_) | Error::Dimension(_) => EXIT_USAGE,
        Error::Numeric(_) | Error::Diverged { .. } => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli
        .out
        .clone()
        .ok_or_else(|| Error::Config("--out DIR is required".into()))?;
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(v)?.as_bytes())
}

/// Resolved configuration next to the artifacts it produced.
fn snapshot<T: Serialize>(dir: &Path, cfg: &T) -> Result<()> {
    let text = toml::to_string_pretty(cfg).map_err(|e| Error::Internal(format!("config snapshot: {e}")))?;
    write_atomic(&dir.join("resolved_config.toml"), text.as_bytes())
}

fn finish(dir: &Path, summary: String, result: serde_json::Value) -> Result<CommandOutcome> {
    let path = dir.join("result.json");
    write_json(&path, &result)?;
    Ok(CommandOutcome {
        code: EXIT_OK,
        summary,
        result: Some(path),
    })
}

pub fn run(cli: &Cli) -> Result<CommandOutcome> {
    match &cli.command {
        Command::Gen => cmd_gen(cli),
        Command::Train { task } => cmd_train(cli, *task),
        Command::Bake { checkpoint, retain } => cmd_bake(cli, checkpoint, *retain),
        Command::Eval { task } => cmd_eval(cli, *task),
        Command::Sweep => cmd_sweep(cli),
        Command::Serve { artifact, bind } => cmd_serve(artifact, bind),
    }
}

pub fn cmd_gen(cli: &Cli) -> Result<CommandOutcome> {
    let mut cfg: GenConfig = load_config(cli.config.as_deref(), &cli.set)?;
    if let Some(s) = cli.seed {
        cfg.generator.seed = s;
    }
    let dir = out_dir(cli)?;
    let conditions = match &cfg.conditions.list {
        Some(l) => l.clone(),
        None => random_conditions(cfg.generator.params, cfg.conditions.count, cfg.conditions.seed),
    };
    if conditions.is_empty() {
        return Err(Error::Config("no conditions to generate".into()));
    }
    let mut ds = synth_ensemble(&cfg.generator, &conditions, cfg.conditions.test)?;
    if !cfg.condition_names.is_empty() {
        if cfg.condition_names.len() != ds.dim_c() {
            return Err(Error::Config(format!(
                "{} condition names for {} parameters",
                cfg.condition_names.len(),
                ds.dim_c()
            )));
        }
        ds.condition_names = cfg.condition_names.clone();
    }
    ds.log_transform = cfg.log_transform;
    save_dataset(&ds, &dir)?;
    snapshot(&dir, &cfg)?;
    finish(
        &dir,
        format!(
            "wrote {} members ({} train / {} test) at {:?} to {}",
            ds.members.len(),
            ds.train.len(),
            ds.test.len(),
            ds.resolution(),
            dir.display()
        ),
        json!({ "members": ds.members.len(), "train": ds.train.len(), "test": ds.test.len(), "resolution": ds.resolution() }),
    )
}

/// Applies the task preset: the spatio-conditional task trains on strided
/// fields with uniform sampling.
pub fn prepare_training(
    cfg: &mut TrainFile,
    base: Option<&Path>,
) -> Result<(NormalizedDataset, Vec<usize>, Vec<String>)> {
    let path = resolve(base, &cfg.dataset);
    let ds = load_dataset(&path)?;
    let ds = match cfg.task {
        Task::Cond => {
            if let Some(f) = cfg.downsample.filter(|&f| f > 1) {
                ds.downsample(f)?
            } else {
                ds
            }
        }
        Task::Spatiocond => {
            let f = *cfg.downsample.get_or_insert(2);
            if cfg.train.sampler.member_importance || cfg.train.sampler.coord_importance {
                log::info!("spatio-conditional task: importance sampling switched off");
            }
            cfg.train.sampler.member_importance = false;
            cfg.train.sampler.coord_importance = false;
            if f > 1 {
                ds.downsample(f)?
            } else {
                ds
            }
        }
    };
    let res = ds.resolution().to_vec();
    let norm = normalize_dataset(&ds)?;
    Ok((norm, res, ds.condition_names))
}

pub fn cmd_train(cli: &Cli, task: Option<Task>) -> Result<CommandOutcome> {
    let mut cfg: TrainFile = load_config(cli.config.as_deref(), &cli.set)?;
    if let Some(t) = task {
        cfg.task = t;
    }
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    cfg.model.validate()?;
    cfg.train.validate()?;
    let dir = out_dir(cli)?;
    let (ds, resolution, names) = prepare_training(&mut cfg, cli.config.as_deref())?;
    if cfg.train.checkpoint_every == 0 {
        cfg.train.checkpoint_every = cfg.train.steps_per_epoch(ds.train.len(), ds.num_vertices());
    }
    let meta = ArtifactMeta {
        norm: Some(ds.stats.clone()),
        condition_names: names,
        training_resolution: Some(resolution.clone()),
        train_config: Some(serde_json::to_value(&cfg)?),
    };
    snapshot(&dir, &cfg)?;
    let mut model = DrrNet::<f32>::init(&cfg.model, cfg.train.seed)?;
    let ck = Checkpointing {
        path: dir.join("last_good.drr"),
        meta: meta.clone(),
    };
    let log = train(&mut model, &ds, &cfg.train, Some(&ck))?;
    write_atomic(&dir.join("train_log.csv"), log.to_csv().as_bytes())?;
    let path = dir.join("model.drr");
    let hash = save_model(&model, &meta, &path)?;
    let fidelity = if ds.test.is_empty() {
        None
    } else {
        Some(drr_core::train::held_out_fidelity(&model, &ds, &ds.test)?)
    };
    finish(
        &dir,
        format!(
            "trained {} steps at {:?}, final loss {:.4e}, checkpoint {} ({})",
            log.summary.total_steps,
            resolution,
            log.summary.final_loss.unwrap_or(f64::NAN),
            path.display(),
            &hash[..12]
        ),
        json!({
            "checkpoint": path,
            "content_hash": hash,
            "params": model.count_params(),
            "summary": log.summary,
            "held_out_psnr_normalized": fidelity.map(|f| f.0),
        }),
    )
}

/// Largest |unbaked − baked| over `n` random queries.
pub fn spot_check(model: &DrrNet<f32>, baked: &BakedStructure, n: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f32> = (0..n * model.dim_x()).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let c: Vec<f32> = (0..n * model.dim_c()).map(|_| rng.random_range(0.0..=1.0)).collect();
    let a = model.forward(&x, &c, n)?;
    let b = baked.forward(&x, &c, n)?;
    Ok(a.iter().zip(&b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs() as f64)))
}

pub fn cmd_bake(cli: &Cli, checkpoint: &Path, retain: bool) -> Result<CommandOutcome> {
    let dir = out_dir(cli)?;
    let loaded = load_checkpoint(checkpoint)?;
    let Artifact::Trainable(model) = loaded.artifact else {
        return Err(Error::Config(format!("{} is already baked", checkpoint.display())));
    };
    let baked = bake(&model, retain)?.with_meta(loaded.meta);
    let diff = spot_check(&model, &baked, 10_000, cli.seed.unwrap_or(0))?;
    let path = dir.join("baked.drr");
    let hash = save_baked(&baked, &path)?;
    let before = estimate_flops(model.config(), QueryMode::PerQuery);
    let after = estimate_flops(model.config(), QueryMode::Baked);
    println!("trainable params: {}", model.count_params());
    println!("baked stored values: {}", baked.stored_values());
    println!("FLOPs/point per-query refinement: {}", before.per_point);
    println!("FLOPs/point baked: {}", after.per_point);
    println!("max |unbaked - baked| over 10000 points: {diff:.3e}");
    snapshot(&dir, model.config())?;
    finish(
        &dir,
        format!("baked {} into {} (fingerprint {})", checkpoint.display(), path.display(), &hash[..12]),
        json!({
            "baked": path,
            "fingerprint": hash,
            "params": model.count_params(),
            "stored_values": baked.stored_values(),
            "flops_per_point_unbaked": before.per_point,
            "flops_per_point_baked": after.per_point,
            "max_abs_diff": diff,
        }),
    )
}

pub fn cmd_eval(cli: &Cli, task: Option<Task>) -> Result<CommandOutcome> {
    let mut cfg: EvalFile = load_config(cli.config.as_deref(), &cli.set)?;
    if let Some(t) = task {
        cfg.task = t;
    }
    let dir = out_dir(cli)?;
    let ds = load_dataset(&resolve(cli.config.as_deref(), &cfg.dataset))?;
    let loaded = load_checkpoint(&resolve(cli.config.as_deref(), &cfg.checkpoint))?;
    let stats = match &loaded.meta.norm {
        Some(s) => s.clone(),
        None => return Err(Error::Data("checkpoint carries no normalization statistics".into())),
    };
    let (predictor, config, params, mode): (Box<dyn FieldPredictor>, _, usize, QueryMode) = match loaded.artifact {
        Artifact::Trainable(m) => {
            let (c, p) = (m.config().clone(), m.count_params());
            (m, c, p, QueryMode::PerQuery)
        }
        Artifact::Baked(b) => {
            let (c, p) = (b.config().clone(), b.stored_values());
            (b, c, p, QueryMode::Baked)
        }
    };
    let opts = EvalOptions {
        space: cfg.metric_space,
        window: cfg.window.unwrap_or_default(),
    };
    let mut outcome = match cfg.task {
        Task::Cond => eval_conditional(predictor.as_ref(), &stats, &ds, &opts)?,
        Task::Spatiocond => eval_spatio_conditional(
            predictor.as_ref(),
            &stats,
            &ds,
            cfg.factor,
            loaded.meta.training_resolution.as_deref(),
            &opts,
        )?,
    };
    outcome.report.attach_model(&config, params, mode);
    let bench = match &cfg.benchmark {
        Some(b) => {
            let r = benchmark_inference(predictor.as_ref(), b.n_conditions, b.n_coords, b.runs, 0)?;
            outcome.report.inference_seconds = Some(r.median_seconds);
            Some(r)
        }
        None => None,
    };
    outcome.report.write(&dir.join("report"))?;
    if cfg.dump {
        outcome.dump(&dir.join("reconstructions"))?;
    }
    snapshot(&dir, &cfg)?;
    let last = outcome.report.sections.last().expect("at least one section");
    finish(
        &dir,
        format!(
            "{} sections; {} mean PSNR {:.2} dB, Rel L2 {:.3e}",
            outcome.report.sections.len(),
            last.name,
            last.mean_psnr,
            last.mean_rel_l2
        ),
        json!({ "report": dir.join("report.json"), "benchmark": bench }),
    )
}

pub fn cmd_sweep(cli: &Cli) -> Result<CommandOutcome> {
    let mut cfg: SweepFile = load_config(cli.config.as_deref(), &cli.set)?;
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    let dir = out_dir(cli)?;
    let ds = load_dataset(&resolve(cli.config.as_deref(), &cfg.dataset))?;
    let rep = sweep_thresholds(&ds, &cfg.model, &cfg.train, &cfg.taus, cfg.variant, &cfg.seeds)?;
    write_atomic(&dir.join("sweep.csv"), rep.to_csv().as_bytes())?;
    snapshot(&dir, &cfg)?;
    let failed = rep.rows.iter().filter(|r| r.error.is_some()).count();
    finish(
        &dir,
        format!("{} sweep cells ({failed} failed) -> {}", rep.rows.len(), dir.join("sweep.csv").display()),
        serde_json::to_value(&rep)?,
    )
}

pub fn cmd_serve(artifact: &Path, bind: &str) -> Result<CommandOutcome> {
    let addr: std::net::SocketAddr = bind
        .parse()
        .map_err(|e| Error::Config(format!("bad bind address {bind}: {e}")))?;
    let loaded = load_checkpoint(artifact)?;
    let baked = match loaded.artifact {
        Artifact::Baked(b) => *b,
        Artifact::Trainable(m) => {
            log::info!("{} is trainable; baking before serving", artifact.display());
            bake(&m, false)?.with_meta(loaded.meta)
        }
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?;
        println!("listening on {}", listener.local_addr()?);
        drr_serve::serve(drr_serve::AppState::new(baked), listener, drr_serve::shutdown_signal()).await?;
        Ok::<_, Error>(())
    })?;
    Ok(CommandOutcome {
        code: EXIT_OK,
        summary: "server stopped".into(),
        result: None,
    })
}
