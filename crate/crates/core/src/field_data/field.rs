use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const AXIS_ORDER: &str = "row-major, last axis fastest";

/// One gridded member: raw values `[res…, channels]` and its condition vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub resolution: Vec<usize>,
    pub channels: usize,
    pub values: Vec<f32>,
    pub condition: Vec<f64>,
    pub name: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Sidecar {
    resolution: Vec<usize>,
    dim: usize,
    dtype: String,
    axis_order: String,
    #[serde(default)]
    condition: Vec<f64>,
    variable: String,
    #[serde(default = "one")]
    channels: usize,
    payload: String,
}

fn one() -> usize {
    1
}

impl Field {
    pub fn new(resolution: Vec<usize>, channels: usize, values: Vec<f32>, condition: Vec<f64>, name: &str) -> Result<Self> {
        if resolution.is_empty() || resolution.len() > 3 || resolution.iter().any(|&r| r < 2) {
            return Err(Error::Data(format!("field resolution {resolution:?} is not 1-3 extents of at least 2")));
        }
        let expect = resolution.iter().product::<usize>() * channels;
        if values.len() != expect {
            return Err(Error::Data(format!(
                "field has {} values, resolution {resolution:?} x {channels} needs {expect}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("field value {i} is not finite")));
        }
        Ok(Self {
            resolution,
            channels,
            values,
            condition,
            name: name.to_string(),
        })
    }

    pub fn dim(&self) -> usize {
        self.resolution.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.values.len() / self.channels
    }

    pub fn vertex(&self, idx: usize) -> &[f32] {
        &self.values[idx * self.channels..(idx + 1) * self.channels]
    }
}

/// Reads a JSON sidecar and its raw little-endian payload (resolved next to the sidecar).
pub fn load_field(path: &Path) -> Result<Field> {
    let text = std::fs::read_to_string(path)?;
    let raw: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for key in ["resolution", "dim", "dtype", "axis_order", "variable", "payload"] {
        if raw.get(key).is_none() {
            return Err(Error::Format(format!("{}: missing key `{key}`", path.display())));
        }
    }
    let side: Sidecar =
        serde_json::from_value(raw).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if side.dtype != "f32le" {
        return Err(Error::Format(format!("{}: unknown `dtype` {}", path.display(), side.dtype)));
    }
    if side.axis_order != AXIS_ORDER {
        return Err(Error::Format(format!("{}: unsupported `axis_order` {}", path.display(), side.axis_order)));
    }
    if side.dim != side.resolution.len() {
        return Err(Error::Format(format!(
            "{}: `dim` {} disagrees with `resolution` {:?}",
            path.display(),
            side.dim,
            side.resolution
        )));
    }
    let payload_path = path.parent().unwrap_or(Path::new(".")).join(&side.payload);
    let bytes = std::fs::read(&payload_path)?;
    let expect = side.resolution.iter().product::<usize>() * side.channels * 4;
    if bytes.len() != expect {
        return Err(Error::Format(format!(
            "{}: `resolution` {:?} x {} needs {expect} payload bytes, found {}",
            path.display(),
            side.resolution,
            side.channels,
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Field::new(side.resolution, side.channels, values, side.condition, &side.variable)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Writes `<stem>.json` and `<stem>.raw` next to each other.
pub fn save_field(field: &Field, path: &Path) -> Result<()> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Config(format!("bad field path {}", path.display())))?;
    let payload = format!("{stem}.raw");
    let side = Sidecar {
        resolution: field.resolution.clone(),
        dim: field.dim(),
        dtype: "f32le".into(),
        axis_order: AXIS_ORDER.into(),
        condition: field.condition.clone(),
        variable: field.name.clone(),
        channels: field.channels,
        payload: payload.clone(),
    };
    let mut bytes = Vec::with_capacity(field.values.len() * 4);
    for v in &field.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(&path.with_file_name(&payload), &bytes)?;
    let text = serde_json::to_vec_pretty(&side).expect("sidecar serializes");
    write_atomic(path, &text)
}

/// Keeps every `factor`-th vertex per axis, starting at 0. Endpoints survive
/// when `factor` divides `r − 1`.
pub fn downsample_field(field: &Field, factor: usize) -> Result<Field> {
    if factor < 2 {
        return Err(Error::Config(format!("downsampling factor must be at least 2, got {factor}")));
    }
    if let Some(r) = field.resolution.iter().find(|&&r| r < factor + 1) {
        return Err(Error::Config(format!("extent {r} is too small for factor {factor}")));
    }
    let new_res: Vec<usize> = field.resolution.iter().map(|&r| (r - 1) / factor + 1).collect();
    let n: usize = new_res.iter().product();
    let mut values = Vec::with_capacity(n * field.channels);
    for v in 0..n {
        let multi = crate::embedding::unflatten(&new_res, v);
        let src = multi
            .iter()
            .zip(&field.resolution)
            .fold(0, |acc, (&i, &r)| acc * r + i * factor);
        values.extend_from_slice(field.vertex(src));
    }
    Field::new(new_res, field.channels, values, field.condition.clone(), &field.name)
}
