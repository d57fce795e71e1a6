use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use super::metrics::{cap_psnr, dynamic_range, psnr, rel_l2, ssim, SsimWindow};
use crate::embedding::MAX_DIM;
use crate::error::{Error, Result};
use crate::field_data::{index_to_coord, save_field, EnsembleDataset, Field, NormStats};
use crate::io::write_atomic;
use crate::model::{estimate_flops, FieldPredictor, ModelConfig, QueryMode};

/// Query points per predictor call while reconstructing a member.
pub const CHUNK: usize = 1 << 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricSpace {
    /// Denormalized values with the member's own range.
    #[default]
    Raw,
    /// Values mapped through the model's normalization.
    Normalized,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalOptions {
    pub space: MetricSpace,
    pub window: SsimWindow,
}

fn ser_psnr<S: Serializer>(p: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(cap_psnr(*p))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemberRow {
    pub member: usize,
    pub condition: Vec<f64>,
    pub rel_l2: f64,
    #[serde(serialize_with = "ser_psnr")]
    pub psnr: f64,
    pub ssim: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportSection {
    pub name: String,
    pub rows: Vec<MemberRow>,
    pub mean_rel_l2: f64,
    #[serde(serialize_with = "ser_psnr")]
    pub mean_psnr: f64,
    pub mean_ssim: Option<f64>,
}

impl ReportSection {
    pub fn new(name: &str, rows: Vec<MemberRow>) -> Self {
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&MemberRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let mean_ssim = rows
            .iter()
            .map(|r| r.ssim)
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / n);
        Self {
            name: name.to_string(),
            mean_rel_l2: mean(&|r| r.rel_l2),
            mean_psnr: mean(&|r| r.psnr),
            mean_ssim,
            rows,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub task: String,
    pub metric_space: MetricSpace,
    pub sections: Vec<ReportSection>,
    pub params: Option<usize>,
    pub flops_per_point: Option<f64>,
    pub tflops_per_1e9_points: Option<f64>,
    pub inference_seconds: Option<f64>,
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "undefined".into()
    } else {
        format!("{v}")
    }
}

impl EvalReport {
    pub fn section(&self, name: &str) -> Option<&ReportSection> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn attach_model(&mut self, config: &ModelConfig, params: usize, mode: QueryMode) {
        let f = estimate_flops(config, mode);
        self.params = Some(params);
        self.flops_per_point = Some(f.per_point);
        self.tflops_per_1e9_points = Some(f.tflops_per_1e9_points);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,member,condition,rel_l2,psnr,ssim\n");
        let ssim = |s: Option<f64>| s.map_or("-".to_string(), fmt_num);
        for sec in &self.sections {
            for r in &sec.rows {
                let cond: Vec<String> = r.condition.iter().map(|c| format!("{c}")).collect();
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    sec.name,
                    r.member,
                    cond.join(";"),
                    fmt_num(r.rel_l2),
                    fmt_num(cap_psnr(r.psnr)),
                    ssim(r.ssim)
                )
                .unwrap();
            }
            writeln!(
                out,
                "{},mean,,{},{},{}",
                sec.name,
                fmt_num(sec.mean_rel_l2),
                fmt_num(cap_psnr(sec.mean_psnr)),
                ssim(sec.mean_ssim)
            )
            .unwrap();
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `<stem>.csv` and `<stem>.json`.
    pub fn write(&self, stem: &Path) -> Result<()> {
        write_atomic(&stem.with_extension("csv"), self.to_csv().as_bytes())?;
        write_atomic(&stem.with_extension("json"), self.to_json().as_bytes())
    }
}

/// Predicts a whole member on its lattice and maps it back to raw units.
pub fn reconstruct(
    model: &dyn FieldPredictor,
    stats: &NormStats,
    resolution: &[usize],
    condition: &[f64],
) -> Result<Field> {
    if model.dim_x() != resolution.len() || model.dim_c() != condition.len() {
        return Err(Error::Dimension(format!(
            "model takes {}D coordinates and {} parameters, member is {}D with {}",
            model.dim_x(),
            model.dim_c(),
            resolution.len(),
            condition.len()
        )));
    }
    let d = resolution.len();
    let ch = model.out_dim();
    let n: usize = resolution.iter().product();
    let c: Vec<f32> = stats.normalize_condition(condition).iter().map(|&v| v as f32).collect();
    let mut values = Vec::with_capacity(n * ch);
    let mut x = Vec::with_capacity(CHUNK * d);
    let mut cc = Vec::with_capacity(CHUNK * c.len());
    for start in (0..n).step_by(CHUNK) {
        let m = CHUNK.min(n - start);
        x.clear();
        cc.clear();
        for v in start..start + m {
            let mut rest = v;
            let mut coord = [0.0f32; MAX_DIM];
            for a in (0..d).rev() {
                coord[a] = index_to_coord(rest % resolution[a], resolution[a]) as f32;
                rest /= resolution[a];
            }
            x.extend_from_slice(&coord[..d]);
            cc.extend_from_slice(&c);
        }
        let y = model.predict(&x, &cc, m)?;
        values.extend(
            y.iter()
                .enumerate()
                .map(|(j, &v)| stats.denormalize_value(v as f64, j % ch) as f32),
        );
    }
    Field::new(resolution.to_vec(), ch, values, condition.to_vec(), "reconstruction")
        .map_err(|e| Error::Numeric(format!("reconstruction: {e}")))
}

fn channel(values: &[f32], ch: usize, k: usize) -> Vec<f32> {
    values.iter().skip(k).step_by(ch).copied().collect()
}

/// Metrics of one reconstructed member against its ground truth.
pub fn member_metrics(
    member: usize,
    pred: &Field,
    gt: &Field,
    stats: &NormStats,
    opts: &EvalOptions,
) -> Result<MemberRow> {
    if pred.resolution != gt.resolution || pred.channels != gt.channels {
        return Err(Error::Dimension(format!(
            "reconstruction {:?} x {} against ground truth {:?} x {}",
            pred.resolution, pred.channels, gt.resolution, gt.channels
        )));
    }
    let ch = gt.channels;
    let map = |f: &Field| -> Vec<f32> {
        match opts.space {
            MetricSpace::Raw => f.values.clone(),
            MetricSpace::Normalized => f
                .values
                .iter()
                .enumerate()
                .map(|(j, &v)| stats.normalize_value(v as f64, j % ch) as f32)
                .collect(),
        }
    };
    let (p, g) = (map(pred), map(gt));
    let fits = gt.resolution.iter().all(|&r| r >= opts.window.size());
    let ssim = if fits {
        let range = dynamic_range(&g);
        let mut total = 0.0;
        for k in 0..ch {
            total += ssim(&channel(&p, ch, k), &channel(&g, ch, k), &gt.resolution, opts.window, Some(range))?;
        }
        Some(total / ch as f64)
    } else {
        None
    };
    Ok(MemberRow {
        member,
        condition: gt.condition.clone(),
        rel_l2: rel_l2(&p, &g)?,
        psnr: psnr(&p, &g)?,
        ssim,
    })
}

/// Reconstructions keyed by section and member index.
pub struct Reconstruction {
    pub section: String,
    pub member: usize,
    pub field: Field,
}

pub struct EvalOutcome {
    pub report: EvalReport,
    pub reconstructions: Vec<Reconstruction>,
}

impl EvalOutcome {
    /// Field files under `<dir>/<section>/member_NNNN.json`.
    pub fn dump(&self, dir: &Path) -> Result<()> {
        for r in &self.reconstructions {
            let sub = dir.join(&r.section);
            std::fs::create_dir_all(&sub)?;
            save_field(&r.field, &sub.join(format!("member_{:04}.json", r.member)))?;
        }
        Ok(())
    }
}

fn run_section(
    name: &str,
    model: &dyn FieldPredictor,
    stats: &NormStats,
    ds: &EnsembleDataset,
    members: &[usize],
    opts: &EvalOptions,
) -> Result<(ReportSection, Vec<Reconstruction>)> {
    let results: Vec<(MemberRow, Field)> = members
        .par_iter()
        .map(|&m| {
            let gt = &ds.members[m];
            let pred = reconstruct(model, stats, &gt.resolution, &gt.condition)?;
            let row = member_metrics(m, &pred, gt, stats, opts)?;
            Ok((row, pred))
        })
        .collect::<Result<_>>()?;
    let (rows, fields): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let recon = members
        .iter()
        .zip(fields)
        .map(|(&member, field)| Reconstruction {
            section: name.to_string(),
            member,
            field,
        })
        .collect();
    Ok((ReportSection::new(name, rows), recon))
}

fn report(task: &str, opts: &EvalOptions, sections: Vec<ReportSection>) -> EvalReport {
    EvalReport {
        task: task.into(),
        metric_space: opts.space,
        sections,
        params: None,
        flops_per_point: None,
        tflops_per_1e9_points: None,
        inference_seconds: None,
    }
}

/// Every test member reconstructed at native resolution.
pub fn eval_conditional(
    model: &dyn FieldPredictor,
    stats: &NormStats,
    ds: &EnsembleDataset,
    opts: &EvalOptions,
) -> Result<EvalOutcome> {
    if ds.test.is_empty() {
        return Err(Error::Config("conditional evaluation needs a nonempty test split".into()));
    }
    let (sec, recon) = run_section("unseen", model, stats, ds, &ds.test, opts)?;
    Ok(EvalOutcome {
        report: report("conditional", opts, vec![sec]),
        reconstructions: recon,
    })
}

/// Full-resolution reconstructions of train ("trained") and test ("unseen")
/// members for a model fit on fields strided by `factor`.
pub fn eval_spatio_conditional(
    model: &dyn FieldPredictor,
    stats: &NormStats,
    full: &EnsembleDataset,
    factor: usize,
    training_resolution: Option<&[usize]>,
    opts: &EvalOptions,
) -> Result<EvalOutcome> {
    if factor == 0 {
        return Err(Error::Config("downsampling factor must be at least 1".into()));
    }
    let expect: Vec<usize> = full.resolution().iter().map(|&r| (r - 1) / factor + 1).collect();
    if let Some(tr) = training_resolution {
        if tr != expect.as_slice() {
            return Err(Error::Config(format!(
                "model was trained at {tr:?}, but factor {factor} of {:?} gives {expect:?}",
                full.resolution()
            )));
        }
    }
    if full.train.is_empty() || full.test.is_empty() {
        return Err(Error::Config("spatio-conditional evaluation needs train and test members".into()));
    }
    let (trained, mut recon) = run_section("trained", model, stats, full, &full.train, opts)?;
    let (unseen, more) = run_section("unseen", model, stats, full, &full.test, opts)?;
    recon.extend(more);
    Ok(EvalOutcome {
        report: report("spatio-conditional", opts, vec![trained, unseen]),
        reconstructions: recon,
    })
}
