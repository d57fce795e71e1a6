//! Ensemble datasets: field files, normalization, sampling, downsampling and
//! analytic generators.

mod dataset;
mod field;
mod norm;
mod sample;
mod synth;

pub use dataset::{
    load_dataset, normalize_dataset, save_dataset, DatasetManifest, EnsembleDataset, MemberEntry, NormMember,
    NormalizedDataset, Split, MANIFEST_FILE,
};
pub use field::{downsample_field, load_field, save_field, Field, AXIS_ORDER};
pub use norm::{index_to_coord, NormStats, LOG_EPS};
pub use sample::{importance_scores, member_scores, Batch, Sampler, SamplerConfig, DEFAULT_BINS};
pub use synth::{random_conditions, synth_ensemble, Blob, FourierTerm, Generator, GeneratorSpec};
