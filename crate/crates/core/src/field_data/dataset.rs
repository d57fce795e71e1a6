use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::field::{load_field, save_field, Field};
use super::norm::{index_to_coord, NormStats};
use super::synth::GeneratorSpec;
use crate::embedding::unflatten;
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberEntry {
    pub file: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub members: Vec<MemberEntry>,
    #[serde(default)]
    pub condition_names: Vec<String>,
    #[serde(default)]
    pub log_transform: bool,
    #[serde(default)]
    pub generator: Option<GeneratorSpec>,
}

/// Members in raw units plus their split.
#[derive(Clone, Debug)]
pub struct EnsembleDataset {
    pub members: Vec<Field>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub condition_names: Vec<String>,
    pub log_transform: bool,
    pub generator: Option<GeneratorSpec>,
}

impl EnsembleDataset {
    pub fn new(members: Vec<Field>, train: Vec<usize>, test: Vec<usize>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Data("dataset has no members".into()))?;
        for (i, m) in members.iter().enumerate() {
            if m.resolution != first.resolution || m.channels != first.channels {
                return Err(Error::Data(format!(
                    "member {i} has resolution {:?} x {}, member 0 has {:?} x {}",
                    m.resolution, m.channels, first.resolution, first.channels
                )));
            }
            if m.condition.len() != first.condition.len() {
                return Err(Error::Data(format!(
                    "member {i} has {} condition parameters, member 0 has {}",
                    m.condition.len(),
                    first.condition.len()
                )));
            }
        }
        if let Some(&i) = train.iter().chain(&test).find(|&&i| i >= members.len()) {
            return Err(Error::Data(format!("split index {i} out of range for {} members", members.len())));
        }
        let dc = first.condition.len();
        Ok(Self {
            members,
            train,
            test,
            condition_names: (0..dc).map(|k| format!("c{k}")).collect(),
            log_transform: false,
            generator: None,
        })
    }

    pub fn resolution(&self) -> &[usize] {
        &self.members[0].resolution
    }

    pub fn dim(&self) -> usize {
        self.members[0].dim()
    }

    pub fn channels(&self) -> usize {
        self.members[0].channels
    }

    pub fn dim_c(&self) -> usize {
        self.members[0].condition.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.members[0].num_vertices()
    }

    /// Same members with every field strided by `factor`.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        let members = self
            .members
            .iter()
            .map(|m| super::field::downsample_field(m, factor))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            members,
            ..self.clone()
        })
    }
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Accepts the dataset directory or the manifest file itself.
pub fn load_dataset(path: &Path) -> Result<EnsembleDataset> {
    let mpath = manifest_path(path);
    let text = std::fs::read_to_string(&mpath)?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", mpath.display())))?;
    let dir = mpath.parent().unwrap_or(Path::new("."));
    let mut members = Vec::with_capacity(manifest.members.len());
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, entry) in manifest.members.iter().enumerate() {
        members.push(load_field(&dir.join(&entry.file))?);
        match entry.split {
            Split::Train => train.push(i),
            Split::Test => test.push(i),
        }
    }
    let mut ds = EnsembleDataset::new(members, train, test)?;
    if !manifest.condition_names.is_empty() {
        if manifest.condition_names.len() != ds.dim_c() {
            return Err(Error::Format(format!(
                "{}: {} `condition_names` for {} condition parameters",
                mpath.display(),
                manifest.condition_names.len(),
                ds.dim_c()
            )));
        }
        ds.condition_names = manifest.condition_names;
    }
    ds.log_transform = manifest.log_transform;
    ds.generator = manifest.generator;
    Ok(ds)
}

pub fn save_dataset(ds: &EnsembleDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(ds.members.len());
    for (i, m) in ds.members.iter().enumerate() {
        let file = format!("member_{i:04}.json");
        save_field(m, &dir.join(&file))?;
        let split = if ds.test.contains(&i) { Split::Test } else { Split::Train };
        if split == Split::Train && !ds.train.contains(&i) {
            continue;
        }
        entries.push(MemberEntry { file, split });
    }
    let manifest = DatasetManifest {
        members: entries,
        condition_names: ds.condition_names.clone(),
        log_transform: ds.log_transform,
        generator: ds.generator.clone(),
    };
    let text = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_atomic(&dir.join(MANIFEST_FILE), &text)
}

impl NormStats {
    /// Values from train members only, conditions from all members.
    pub fn fit(ds: &EnsembleDataset) -> Result<Self> {
        if ds.train.is_empty() {
            return Err(Error::Data("train split is empty".into()));
        }
        let ch = ds.channels();
        let mut value_min = vec![f64::INFINITY; ch];
        let mut value_max = vec![f64::NEG_INFINITY; ch];
        for &i in &ds.train {
            for vertex in ds.members[i].values.chunks_exact(ch) {
                for (k, &v) in vertex.iter().enumerate() {
                    let v = if ds.log_transform {
                        if v < 0.0 {
                            return Err(Error::Data(format!("log transform of negative value {v} in channel {k}")));
                        }
                        (v as f64 + super::LOG_EPS).ln()
                    } else {
                        v as f64
                    };
                    value_min[k] = value_min[k].min(v);
                    value_max[k] = value_max[k].max(v);
                }
            }
        }
        let dc = ds.dim_c();
        let mut cond_min = vec![f64::INFINITY; dc];
        let mut cond_max = vec![f64::NEG_INFINITY; dc];
        for m in &ds.members {
            for (k, &c) in m.condition.iter().enumerate() {
                cond_min[k] = cond_min[k].min(c);
                cond_max[k] = cond_max[k].max(c);
            }
        }
        let stats = Self {
            value_min,
            value_max,
            cond_min,
            cond_max,
            log_transform: ds.log_transform,
        };
        stats.validate()?;
        Ok(stats)
    }
}

/// A member in model units: values in `[0, 1]`, condition in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct NormMember {
    pub values: Vec<f32>,
    pub condition: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct NormalizedDataset {
    pub stats: NormStats,
    pub resolution: Vec<usize>,
    pub channels: usize,
    pub members: Vec<NormMember>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn normalize_dataset(ds: &EnsembleDataset) -> Result<NormalizedDataset> {
    let stats = NormStats::fit(ds)?;
    NormalizedDataset::with_stats(ds, stats)
}

impl NormalizedDataset {
    /// Applies frozen stats, e.g. the ones stored with a trained model.
    pub fn with_stats(ds: &EnsembleDataset, stats: NormStats) -> Result<Self> {
        if stats.value_channels() != ds.channels() || stats.cond_min.len() != ds.dim_c() {
            return Err(Error::Dimension(format!(
                "stats cover {} channels / {} parameters, dataset has {} / {}",
                stats.value_channels(),
                stats.cond_min.len(),
                ds.channels(),
                ds.dim_c()
            )));
        }
        let ch = ds.channels();
        let members = ds
            .members
            .iter()
            .map(|m| NormMember {
                values: m
                    .values
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| stats.normalize_value(v as f64, j % ch) as f32)
                    .collect(),
                condition: stats
                    .normalize_condition(&m.condition)
                    .into_iter()
                    .map(|c| c as f32)
                    .collect(),
            })
            .collect();
        Ok(Self {
            stats,
            resolution: ds.resolution().to_vec(),
            channels: ch,
            members,
            train: ds.train.clone(),
            test: ds.test.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.resolution.len()
    }

    pub fn dim_c(&self) -> usize {
        self.stats.cond_min.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.resolution.iter().product()
    }

    /// Align-corners coordinate of a flat lattice index, appended to `out`.
    pub fn coord_into(&self, vertex: usize, out: &mut Vec<f32>) {
        for (a, i) in unflatten(&self.resolution, vertex).into_iter().enumerate() {
            out.push(index_to_coord(i, self.resolution[a]) as f32);
        }
    }

    /// Coordinates of every lattice vertex, row-major.
    pub fn lattice_coords(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.num_vertices() * self.dim());
        for v in 0..self.num_vertices() {
            self.coord_into(v, &mut out);
        }
        out
    }
}
