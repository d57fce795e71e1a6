use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A lattice extent given either once for every axis or per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Extent {
    Cubic(usize),
    PerAxis(Vec<usize>),
}

impl Extent {
    pub fn resolve(&self, dim: usize) -> Result<Vec<usize>> {
        let v = match self {
            Extent::Cubic(r) => vec![*r; dim],
            Extent::PerAxis(v) if v.len() == dim => v.clone(),
            Extent::PerAxis(v) => {
                return Err(Error::Config(format!("extent {v:?} does not have {dim} axes")));
            }
        };
        if let Some(r) = v.iter().find(|&&r| r < 2) {
            return Err(Error::Config(format!("extent {r} is below the minimum of 2")));
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinerConfig {
    pub depth: usize,
    /// Hidden width of each block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    /// Alternative to `hidden`: width = round(multiplier · unified width).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_multiplier: Option<f64>,
}

impl RefinerConfig {
    pub fn with_hidden(depth: usize, hidden: usize) -> Self {
        Self {
            depth,
            hidden: Some(hidden),
            hidden_multiplier: None,
        }
    }

    pub fn with_multiplier(depth: usize, multiplier: f64) -> Self {
        Self {
            depth,
            hidden: None,
            hidden_multiplier: Some(multiplier),
        }
    }

    pub fn hidden(&self, width: usize) -> usize {
        match (self.hidden, self.hidden_multiplier) {
            (Some(h), _) => h.max(1),
            (None, Some(m)) => ((m * width as f64).round() as usize).max(1),
            (None, None) => width,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        match (self.hidden, self.hidden_multiplier) {
            (Some(_), Some(_)) => Err(Error::Config(format!(
                "{name}.refiner sets both hidden and hidden_multiplier"
            ))),
            (None, None) => Err(Error::Config(format!(
                "{name}.refiner needs hidden (or hidden_multiplier)"
            ))),
            (Some(0), _) => Err(Error::Config(format!("{name}.refiner.hidden must be positive"))),
            (_, Some(m)) if !(m > 0.0 && m.is_finite()) => Err(Error::Config(format!(
                "{name}.refiner.hidden_multiplier must be positive, got {m}"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialConfig {
    pub dim: usize,
    /// One entry per grid level, coarse to fine.
    pub levels: Vec<Extent>,
    pub channels: usize,
    /// Super-resolution target of the unified lattice; defaults to the finest level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssr_resolution: Option<Extent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pe_frequencies: Option<usize>,
    pub refiner: RefinerConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionConfig {
    pub params: usize,
    /// Line resolutions shared by every parameter, coarse to fine.
    pub levels: Vec<usize>,
    pub channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_resolution: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pe_frequencies: Option<usize>,
    pub refiner: RefinerConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub hidden: usize,
    /// Number of linear maps; one means a single `in → out` layer.
    pub layers: usize,
    #[serde(default = "one")]
    pub out_dim: usize,
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    #[default]
    Concat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Flags {
    #[serde(default = "yes")]
    pub spatial_refiner: bool,
    #[serde(default = "yes")]
    pub condition_refiner: bool,
    /// Super-resolution and positional lift. Off means the unified lattice is
    /// the finest level and features are not lifted.
    #[serde(default = "yes")]
    pub pi: bool,
}

fn yes() -> bool {
    true
}

impl Default for Flags {
    fn default() -> Self {
        Self {
            spatial_refiner: true,
            condition_refiner: true,
            pi: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    /// Embedding values start uniform in `±embedding_range`.
    #[serde(default = "default_range")]
    pub embedding_range: f64,
    #[serde(default = "default_eps")]
    pub rmsnorm_eps: f64,
}

fn default_range() -> f64 {
    1e-2
}

fn default_eps() -> f64 {
    1e-6
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            embedding_range: default_range(),
            rmsnorm_eps: default_eps(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub spatial: SpatialConfig,
    /// Absent for fields without condition parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<ConditionConfig>,
    pub decoder: DecoderConfig,
    #[serde(default)]
    pub fusion: Fusion,
    #[serde(default)]
    pub flags: Flags,
    #[serde(default)]
    pub init: InitConfig,
}

impl ModelConfig {
    pub fn dim_x(&self) -> usize {
        self.spatial.dim
    }

    pub fn dim_c(&self) -> usize {
        self.condition.as_ref().map_or(0, |c| c.params)
    }

    pub fn spatial_levels(&self) -> Result<Vec<Vec<usize>>> {
        self.spatial.levels.iter().map(|e| e.resolve(self.spatial.dim)).collect()
    }

    /// Super-resolution target once the π flag is applied.
    pub fn spatial_target(&self) -> Result<Option<Vec<usize>>> {
        match (&self.spatial.ssr_resolution, self.flags.pi) {
            (Some(e), true) => Ok(Some(e.resolve(self.spatial.dim)?)),
            _ => Ok(None),
        }
    }

    pub fn spatial_pe(&self) -> Option<usize> {
        self.spatial.pe_frequencies.filter(|_| self.flags.pi)
    }

    pub fn condition_pe(&self) -> Option<usize> {
        self.condition.as_ref().and_then(|c| c.pe_frequencies).filter(|_| self.flags.pi)
    }

    pub fn condition_global(&self) -> Option<usize> {
        self.condition.as_ref().and_then(|c| c.global_resolution).filter(|_| self.flags.pi)
    }

    /// Unified spatial width (after any lift).
    pub fn spatial_width(&self) -> usize {
        self.spatial.levels.len() * self.spatial.channels * self.spatial_pe().map_or(1, |k| 2 * k)
    }

    /// Unified condition width (after any lift); zero without conditions.
    pub fn condition_width(&self) -> usize {
        self.condition.as_ref().map_or(0, |c| {
            c.params * c.levels.len() * c.channels * self.condition_pe().map_or(1, |k| 2 * k)
        })
    }

    pub fn decoder_in(&self) -> usize {
        self.spatial_width() + self.condition_width()
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.spatial;
        if !(1..=3).contains(&s.dim) {
            return Err(Error::Config(format!("spatial.dim must be 1, 2 or 3, got {}", s.dim)));
        }
        if s.levels.is_empty() {
            return Err(Error::Config("spatial.levels is empty".into()));
        }
        if s.channels == 0 {
            return Err(Error::Config("spatial.channels must be positive".into()));
        }
        let levels = self.spatial_levels()?;
        if let Some(t) = self.spatial_target()? {
            for l in &levels {
                if l.iter().zip(&t).any(|(a, b)| a > b) {
                    return Err(Error::Config(format!(
                        "spatial.ssr_resolution {t:?} is coarser than level {l:?}"
                    )));
                }
            }
        }
        if s.pe_frequencies == Some(0) {
            return Err(Error::Config("spatial.pe_frequencies must be positive when set".into()));
        }
        if self.flags.spatial_refiner {
            s.refiner.validate("spatial")?;
        }
        if let Some(c) = &self.condition {
            if c.params == 0 {
                return Err(Error::Config("condition.params must be positive; omit the section instead".into()));
            }
            if c.levels.is_empty() || c.channels == 0 {
                return Err(Error::Config("condition.levels and condition.channels must be nonempty".into()));
            }
            if c.levels.iter().any(|&r| r < 2) {
                return Err(Error::Config(format!("condition.levels {:?} has an extent below 2", c.levels)));
            }
            if c.levels.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::Config("condition.levels must be sorted coarse to fine".into()));
            }
            if let Some(g) = c.global_resolution {
                if g < *c.levels.iter().max().unwrap() {
                    return Err(Error::Config(format!(
                        "condition.global_resolution {g} is coarser than the finest line"
                    )));
                }
            }
            if c.pe_frequencies == Some(0) {
                return Err(Error::Config("condition.pe_frequencies must be positive when set".into()));
            }
            if self.flags.condition_refiner {
                c.refiner.validate("condition")?;
            }
        }
        if self.decoder.layers == 0 || self.decoder.out_dim == 0 {
            return Err(Error::Config("decoder.layers and decoder.out_dim must be positive".into()));
        }
        if self.decoder.layers > 1 && self.decoder.hidden == 0 {
            return Err(Error::Config("decoder.hidden must be positive".into()));
        }
        if !(self.init.embedding_range.is_finite() && self.init.embedding_range >= 0.0) {
            return Err(Error::Config("init.embedding_range must be finite and non-negative".into()));
        }
        Ok(())
    }
}
