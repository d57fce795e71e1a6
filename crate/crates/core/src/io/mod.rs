//! Checkpoint and baked-artifact files, and layered TOML configuration.

mod checkpoint;
mod config;

pub(crate) use checkpoint::baked_fingerprint;
pub use checkpoint::{
    decode, encode_baked, encode_model, load_checkpoint, save_baked, save_model, write_atomic, Artifact, ArtifactKind,
    ArtifactMeta, Loaded, TensorEntry, MAGIC, VERSION,
};
pub use config::{apply_override, load_config, parse_overrides};
