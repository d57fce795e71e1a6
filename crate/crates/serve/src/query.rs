use drr_core::field_data::{index_to_coord, NormStats};
use drr_core::model::{estimate_flops, BakedStructure, FieldPredictor, QueryMode};
use serde::{Deserialize, Serialize};

/// Largest slice extent per axis.
pub const MAX_EXTENT: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub enum QueryError {
    BadRequest(String),
    TooLarge(String),
    Internal(String),
}

impl std::fmt::Display for QueryError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::BadRequest(m) | Self::TooLarge(m) | Self::Internal(m) => f.write_str(m),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelInfo {
    pub d_x: usize,
    pub d_c: usize,
    pub out_dim: usize,
    pub condition_names: Vec<String>,
    /// Raw `[min, max]` per parameter; `[0, 1]` without stored statistics.
    pub condition_ranges: Vec<[f64; 2]>,
    pub value_ranges: Vec<[f64; 2]>,
    pub params: usize,
    pub flops_per_point: f64,
    pub fingerprint: String,
    pub training_resolution: Option<Vec<usize>>,
}

pub fn model_info(b: &BakedStructure) -> ModelInfo {
    let dc = b.dim_c();
    let names = if b.meta().condition_names.len() == dc {
        b.meta().condition_names.clone()
    } else {
        (0..dc).map(|k| format!("c{k}")).collect()
    };
    let (condition_ranges, value_ranges) = match &b.meta().norm {
        Some(s) => (
            s.cond_min.iter().zip(&s.cond_max).map(|(&a, &z)| [a, z]).collect(),
            s.value_min
                .iter()
                .zip(&s.value_max)
                .enumerate()
                .map(|(k, _)| [s.denormalize_value(0.0, k), s.denormalize_value(1.0, k)])
                .collect(),
        ),
        None => (vec![[0.0, 1.0]; dc], vec![[0.0, 1.0]; b.out_dim()]),
    };
    ModelInfo {
        d_x: b.dim_x(),
        d_c: dc,
        out_dim: b.out_dim(),
        condition_names: names,
        condition_ranges,
        value_ranges,
        params: b.stored_values(),
        flops_per_point: estimate_flops(b.config(), QueryMode::Baked).per_point,
        fingerprint: b.fingerprint().to_string(),
        training_resolution: b.meta().training_resolution.clone(),
    }
}

fn default_true() -> bool {
    true
}

/// `conditions` holds one raw row per point, or a single row shared by all.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointsRequest {
    pub coordinates: Vec<Vec<f32>>,
    #[serde(default)]
    pub conditions: Vec<Vec<f64>>,
    #[serde(default = "default_true")]
    pub denormalize: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PointsResponse {
    /// Row-major `n × channels`.
    pub values: Vec<f32>,
    pub channels: usize,
    /// Whether any condition was clamped into the declared range.
    pub clamped: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceRequest {
    #[serde(default)]
    pub condition: Vec<f64>,
    pub axis: usize,
    pub position: f32,
    pub resolution: Vec<usize>,
    #[serde(default = "default_true")]
    pub denormalize: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SliceResponse {
    pub values: Vec<f32>,
    pub shape: Vec<usize>,
    pub channels: usize,
    pub min: f32,
    pub max: f32,
    pub condition_used: Vec<f64>,
    pub clamped: bool,
}

fn bad(m: String) -> QueryError {
    QueryError::BadRequest(m)
}

/// Raw condition to model units, clamped to the declared range.
fn condition_to_model(stats: Option<&NormStats>, c: &[f64], dc: usize) -> Result<(Vec<f32>, Vec<f64>, bool), QueryError> {
    if c.len() != dc {
        return Err(bad(format!("condition has {} parameters, model takes {dc}", c.len())));
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(bad(format!("non-finite condition {c:?}")));
    }
    Ok(match stats {
        Some(s) => {
            let (used, moved) = s.clamp_condition(c);
            let norm = s.normalize_condition(&used).iter().map(|&v| v as f32).collect();
            (norm, used, moved)
        }
        None => {
            let used: Vec<f64> = c.iter().map(|v| v.clamp(0.0, 1.0)).collect();
            let moved = used != c;
            (used.iter().map(|&v| v as f32).collect(), used, moved)
        }
    })
}

fn to_output(b: &BakedStructure, y: Vec<f32>, denormalize: bool) -> Vec<f32> {
    match (&b.meta().norm, denormalize) {
        (Some(s), true) => {
            let ch = b.out_dim();
            y.iter()
                .enumerate()
                .map(|(j, &v)| s.denormalize_value(v as f64, j % ch) as f32)
                .collect()
        }
        _ => y,
    }
}

pub fn query_points(b: &BakedStructure, req: &PointsRequest, max_points: usize) -> Result<PointsResponse, QueryError> {
    let n = req.coordinates.len();
    if n > max_points {
        return Err(QueryError::TooLarge(format!("{n} points exceed the limit of {max_points}")));
    }
    let (d, dc) = (b.dim_x(), b.dim_c());
    let shared = req.conditions.len() == 1;
    if dc > 0 && !shared && req.conditions.len() != n {
        return Err(bad(format!("{} condition rows for {n} points", req.conditions.len())));
    }
    if dc == 0 && req.conditions.iter().any(|c| !c.is_empty()) {
        return Err(bad("model takes no condition".into()));
    }
    let mut x = Vec::with_capacity(n * d);
    for (i, p) in req.coordinates.iter().enumerate() {
        if p.len() != d {
            return Err(bad(format!("point {i} has {} coordinates, model takes {d}", p.len())));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(bad(format!("point {i} has a non-finite coordinate")));
        }
        x.extend_from_slice(p);
    }
    let stats = b.meta().norm.as_ref();
    let mut c = Vec::with_capacity(n * dc);
    let mut clamped = false;
    if dc > 0 {
        if shared {
            let (row, _, moved) = condition_to_model(stats, &req.conditions[0], dc)?;
            clamped = moved;
            for _ in 0..n {
                c.extend_from_slice(&row);
            }
        } else {
            for row in &req.conditions {
                let (r, _, moved) = condition_to_model(stats, row, dc)?;
                clamped |= moved;
                c.extend_from_slice(&r);
            }
        }
    }
    let y = b.predict(&x, &c, n).map_err(|e| bad(e.to_string()))?;
    Ok(PointsResponse {
        values: to_output(b, y, req.denormalize),
        channels: b.out_dim(),
        clamped,
    })
}

/// Lattice over the axes other than `axis` (align-corners), with `axis` held
/// at `position`.
pub fn query_slice(b: &BakedStructure, req: &SliceRequest, max_points: usize) -> Result<SliceResponse, QueryError> {
    let d = b.dim_x();
    if req.axis >= d {
        return Err(bad(format!("axis {} out of range for a {d}D model", req.axis)));
    }
    if req.resolution.len() != d - 1 {
        return Err(bad(format!("slice of a {d}D model needs {} extents, got {}", d - 1, req.resolution.len())));
    }
    if let Some(r) = req.resolution.iter().find(|&&r| !(2..=MAX_EXTENT).contains(&r)) {
        return Err(bad(format!("slice extent {r} outside [2, {MAX_EXTENT}]")));
    }
    if !(req.position.is_finite() && (-1.0..=1.0).contains(&req.position)) {
        return Err(bad(format!("position {} outside [-1, 1]", req.position)));
    }
    let n: usize = req.resolution.iter().product();
    if n > max_points {
        return Err(QueryError::TooLarge(format!("{n} slice points exceed the limit of {max_points}")));
    }
    let (cm, used, clamped) = condition_to_model(b.meta().norm.as_ref(), &req.condition, b.dim_c())?;
    let mut x = Vec::with_capacity(n * d);
    let mut idx = vec![0usize; d - 1];
    for _ in 0..n {
        let mut k = 0;
        for a in 0..d {
            if a == req.axis {
                x.push(req.position);
            } else {
                x.push(index_to_coord(idx[k], req.resolution[k]) as f32);
                k += 1;
            }
        }
        for k in (0..d - 1).rev() {
            idx[k] += 1;
            if idx[k] < req.resolution[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    let c = cm.repeat(n);
    let y = b.predict(&x, &c, n).map_err(|e| bad(e.to_string()))?;
    let values = to_output(b, y, req.denormalize);
    let (min, max) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, z), &v| (a.min(v), z.max(v)));
    Ok(SliceResponse {
        values,
        shape: req.resolution.clone(),
        channels: b.out_dim(),
        min,
        max,
        condition_used: used,
        clamped,
    })
}
