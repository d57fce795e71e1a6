//! The full network: spatial and condition encoders, concatenation fusion and
//! an MLP decoder, plus baking, parameter counts and analytic FLOPs.

mod baked;
mod config;
mod flops;
mod net;

pub use baked::{bake, baked_forward, BakedStructure};
pub use config::{
    ConditionConfig, DecoderConfig, Extent, Flags, Fusion, InitConfig, ModelConfig, RefinerConfig, SpatialConfig,
};
pub use flops::{estimate_flops, FlopReport, QueryMode};
pub use net::{DrrNet, FieldPredictor, NetCache};

#[cfg(test)]
pub(crate) mod tests;
