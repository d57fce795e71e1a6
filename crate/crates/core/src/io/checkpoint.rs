use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::embedding::{ChannelManifest, FeatureGrid};
use crate::error::{Error, Result};
use crate::field_data::NormStats;
use crate::model::{BakedStructure, DrrNet, ModelConfig};
use crate::numerics::{Linear, Mlp, Parameters, Real};

pub const MAGIC: &[u8; 4] = b"DRR1";
pub const VERSION: u32 = 1;
const PREAMBLE: usize = 4 + 4 + 8;

/// Context stored next to the tensors of every artifact.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactMeta {
    #[serde(default)]
    pub norm: Option<NormStats>,
    #[serde(default)]
    pub condition_names: Vec<String>,
    /// Lattice extents of the fields the model was trained on.
    #[serde(default)]
    pub training_resolution: Option<Vec<usize>>,
    /// Snapshot of the training configuration that produced the model.
    #[serde(default)]
    pub train_config: Option<Value>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Trainable,
    Baked,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the payload.
    pub offset: u64,
    /// Byte length.
    pub length: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: ArtifactKind,
    model: ModelConfig,
    meta: ArtifactMeta,
    /// `f32`, or `f64_downcast` when saved from a double-precision model.
    precision: String,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    spatial_manifest: Option<ChannelManifest>,
    #[serde(default)]
    condition_manifest: Option<ChannelManifest>,
    /// Baked artifacts only: the full trainable parameter set is included.
    #[serde(default)]
    retained: bool,
    #[serde(default)]
    content_hash: String,
}

/// A decoded artifact.
#[derive(Clone, Debug)]
pub enum Artifact {
    Trainable(Box<DrrNet<f32>>),
    Baked(Box<BakedStructure>),
}

#[derive(Clone, Debug)]
pub struct Loaded {
    pub artifact: Artifact,
    pub meta: ArtifactMeta,
    pub content_hash: String,
    pub precision: String,
}

impl Loaded {
    pub fn kind(&self) -> ArtifactKind {
        match self.artifact {
            Artifact::Trainable(_) => ArtifactKind::Trainable,
            Artifact::Baked(_) => ArtifactKind::Baked,
        }
    }
}

struct Builder {
    tensors: Vec<TensorEntry>,
    payload: Vec<u8>,
}

impl Builder {
    fn new() -> Self {
        Self {
            tensors: Vec::new(),
            payload: Vec::new(),
        }
    }

    fn push<T: Real>(&mut self, name: String, shape: &[usize], data: &[T]) {
        let offset = self.payload.len() as u64;
        for &v in data {
            self.payload.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        self.tensors.push(TensorEntry {
            name,
            shape: shape.to_vec(),
            dtype: "f32".into(),
            offset,
            length: self.payload.len() as u64 - offset,
        });
    }

    fn push_params<T: Real, P: Parameters<T>>(&mut self, prefix: &str, p: &P) {
        p.visit(prefix, &mut |name, t| self.push(name, t.shape(), t.data()));
    }
}

fn canonical(v: &Value) -> Vec<u8> {
    // serde_json maps are ordered by key, so this is sorted and compact
    serde_json::to_vec(v).expect("JSON values always serialize")
}

fn digest(header_without_hash: &[u8], payload: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(header_without_hash);
    h.update(payload);
    hex::encode(h.finalize())
}

fn finish(mut header: Header, payload: Vec<u8>) -> (Vec<u8>, String) {
    header.content_hash = String::new();
    let mut value = serde_json::to_value(&header).expect("header serializes");
    let obj = value.as_object_mut().unwrap();
    obj.remove("content_hash");
    let hash = digest(&canonical(&value), &payload);
    value
        .as_object_mut()
        .unwrap()
        .insert("content_hash".into(), Value::String(hash.clone()));
    let text = canonical(&value);
    let mut out = Vec::with_capacity(PREAMBLE + text.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(&payload);
    (out, hash)
}

/// Serialized bytes of a trainable model and their content hash.
pub fn encode_model<T: Real>(model: &DrrNet<T>, meta: &ArtifactMeta) -> (Vec<u8>, String) {
    let mut b = Builder::new();
    b.push_params("", model);
    let header = Header {
        kind: ArtifactKind::Trainable,
        model: model.config().clone(),
        meta: meta.clone(),
        precision: precision_tag::<T>(),
        tensors: b.tensors,
        spatial_manifest: None,
        condition_manifest: None,
        retained: false,
        content_hash: String::new(),
    };
    finish(header, b.payload)
}

fn precision_tag<T: Real>() -> String {
    if T::NAME == "f32" {
        "f32".into()
    } else {
        format!("{}_downcast", T::NAME)
    }
}

/// Serialized bytes of a baked structure and their content hash.
pub fn encode_baked(baked: &BakedStructure) -> (Vec<u8>, String) {
    let mut b = Builder::new();
    b.push("spatial".into(), baked.spatial.values().shape(), baked.spatial.data());
    for (k, line) in baked.condition_lines.iter().enumerate() {
        b.push(format!("condition.line{k}"), line.values().shape(), line.data());
    }
    b.push_params("decoder", &baked.decoder);
    if let Some(m) = &baked.retained {
        b.push_params("retained", m);
    }
    let header = Header {
        kind: ArtifactKind::Baked,
        model: baked.config().clone(),
        meta: baked.meta().clone(),
        precision: "f32".into(),
        tensors: b.tensors,
        spatial_manifest: Some(baked.spatial_manifest.clone()),
        condition_manifest: baked.condition_manifest.clone(),
        retained: baked.retained.is_some(),
        content_hash: String::new(),
    };
    finish(header, b.payload)
}

pub(crate) fn baked_fingerprint(baked: &BakedStructure) -> String {
    encode_baked(baked).1
}

/// Writes to `<path>.partial` and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut partial = path.as_os_str().to_owned();
    partial.push(".partial");
    let partial = std::path::PathBuf::from(partial);
    std::fs::write(&partial, bytes)?;
    std::fs::rename(&partial, path)?;
    Ok(())
}

pub fn save_model<T: Real>(model: &DrrNet<T>, meta: &ArtifactMeta, path: &Path) -> Result<String> {
    let (bytes, hash) = encode_model(model, meta);
    write_atomic(path, &bytes)?;
    Ok(hash)
}

pub fn save_baked(baked: &BakedStructure, path: &Path) -> Result<String> {
    let (bytes, hash) = encode_baked(baked);
    write_atomic(path, &bytes)?;
    Ok(hash)
}

pub fn load_checkpoint(path: &Path) -> Result<Loaded> {
    decode(&std::fs::read(path)?)
}

pub fn decode(bytes: &[u8]) -> Result<Loaded> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < PREAMBLE {
        return Err(Error::OffsetRange("file ends inside the preamble".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let header_end = (PREAMBLE as u64)
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| Error::OffsetRange(format!("header length {header_len} exceeds the file")))?
        as usize;
    let raw = &bytes[PREAMBLE..header_end];
    let payload = &bytes[header_end..];

    let mut value: Value =
        serde_json::from_slice(raw).map_err(|e| Error::Format(format!("header is not valid JSON: {e}")))?;
    if canonical(&value) != raw {
        return Err(Error::Format("header is not in canonical form".into()));
    }
    let stored = match value.as_object_mut().and_then(|o| o.remove("content_hash")) {
        Some(Value::String(s)) => s,
        _ => return Err(Error::Format("header is missing content_hash".into())),
    };
    let without_hash = canonical(&value);
    let header: Header =
        serde_json::from_value(value).map_err(|e| Error::Format(format!("header fields: {e}")))?;

    let mut end = 0u64;
    for t in &header.tensors {
        if t.dtype != "f32" {
            return Err(Error::Format(format!("tensor {} has unsupported dtype {}", t.name, t.dtype)));
        }
        let expect = t.shape.iter().product::<usize>() as u64 * 4;
        if t.length != expect {
            return Err(Error::Format(format!(
                "tensor {} declares {} bytes for shape {:?}",
                t.name, t.length, t.shape
            )));
        }
        if t.offset != end {
            return Err(Error::OffsetRange(format!(
                "tensor {} starts at {} but the previous one ends at {end}",
                t.name, t.offset
            )));
        }
        end = t.offset + t.length;
        if end > payload.len() as u64 {
            return Err(Error::OffsetRange(format!(
                "tensor {} ends at byte {end} of a {}-byte payload",
                t.name,
                payload.len()
            )));
        }
    }
    if end != payload.len() as u64 {
        return Err(Error::Format(format!(
            "{} trailing payload bytes",
            payload.len() as u64 - end
        )));
    }
    let actual = digest(&without_hash, payload);
    if actual != stored {
        return Err(Error::HashMismatch {
            expected: stored,
            actual,
        });
    }

    let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)> = BTreeMap::new();
    for t in &header.tensors {
        let data = payload[t.offset as usize..(t.offset + t.length) as usize]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.insert(t.name.clone(), (t.shape.clone(), data));
    }
    header.model.validate()?;
    let artifact = match header.kind {
        ArtifactKind::Trainable => Artifact::Trainable(Box::new(fill_model(&header.model, "", &mut tensors)?)),
        ArtifactKind::Baked => Artifact::Baked(Box::new(rebuild_baked(&header, &mut tensors)?)),
    };
    if let Some(name) = tensors.keys().next() {
        return Err(Error::Format(format!("unexpected tensor {name}")));
    }
    Ok(Loaded {
        artifact,
        meta: header.meta,
        content_hash: stored,
        precision: header.precision,
    })
}

fn take(tensors: &mut BTreeMap<String, (Vec<usize>, Vec<f32>)>, name: &str) -> Result<(Vec<usize>, Vec<f32>)> {
    tensors
        .remove(name)
        .ok_or_else(|| Error::Format(format!("missing tensor {name}")))
}

fn fill_params<P: Parameters<f32>>(
    p: &mut P,
    prefix: &str,
    tensors: &mut BTreeMap<String, (Vec<usize>, Vec<f32>)>,
) -> Result<()> {
    let mut err = None;
    p.visit_mut(prefix, &mut |name, t| {
        if err.is_some() {
            return;
        }
        match take(tensors, &name) {
            Ok((shape, data)) if shape == t.shape() => t.data_mut().copy_from_slice(&data),
            Ok((shape, _)) => {
                err = Some(Error::Format(format!(
                    "tensor {name} has shape {shape:?}, model expects {:?}",
                    t.shape()
                )))
            }
            Err(e) => err = Some(e),
        }
    });
    err.map_or(Ok(()), Err)
}

fn fill_model(cfg: &ModelConfig, prefix: &str, tensors: &mut BTreeMap<String, (Vec<usize>, Vec<f32>)>) -> Result<DrrNet<f32>> {
    let mut m = DrrNet::<f32>::init(cfg, 0)?;
    fill_params(&mut m, prefix, tensors)?;
    Ok(m)
}

fn grid(shape: Vec<usize>, data: Vec<f32>) -> Result<FeatureGrid<f32>> {
    let (res, ch) = shape.split_at(shape.len().saturating_sub(1));
    let ch = *ch
        .first()
        .ok_or_else(|| Error::Format("lattice tensor without a channel axis".into()))?;
    FeatureGrid::new(res.to_vec(), ch, data).map_err(|e| Error::Format(e.to_string()))
}

fn rebuild_baked(header: &Header, tensors: &mut BTreeMap<String, (Vec<usize>, Vec<f32>)>) -> Result<BakedStructure> {
    let cfg = &header.model;
    let (shape, data) = take(tensors, "spatial")?;
    let spatial = grid(shape, data)?;
    let mut lines = Vec::with_capacity(cfg.dim_c());
    for k in 0..cfg.dim_c() {
        let (shape, data) = take(tensors, &format!("condition.line{k}"))?;
        lines.push(grid(shape, data)?);
    }
    let d = &cfg.decoder;
    let mut decoder = Mlp {
        layers: (0..d.layers)
            .map(|i| {
                let a = if i == 0 { cfg.decoder_in() } else { d.hidden };
                let b = if i + 1 == d.layers { d.out_dim } else { d.hidden };
                Linear::zeros(a, b)
            })
            .collect(),
    };
    fill_params(&mut decoder, "decoder", tensors)?;
    let retained = if header.retained {
        Some(fill_model(cfg, "retained", tensors)?)
    } else {
        None
    };
    let spatial_manifest = header
        .spatial_manifest
        .clone()
        .ok_or_else(|| Error::Format("baked artifact without a spatial manifest".into()))?;
    BakedStructure::from_parts(
        cfg.clone(),
        spatial,
        lines,
        decoder,
        spatial_manifest,
        header.condition_manifest.clone(),
        retained,
        header.meta.clone(),
    )
}
