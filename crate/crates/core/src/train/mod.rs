//! Batch sampling, augmentation, L2 fitting with Adam and cosine decay,
//! logging, checkpointing and augmentation threshold sweeps.

mod config;
mod record;
mod run;
mod sweep;

pub use config::{SamplingConfig, TrainConfig};
pub use record::{EvalRecord, StepRecord, TrainLog, TrainSummary};
pub use run::{held_out_fidelity, train, Checkpointing};
pub use sweep::{sweep_thresholds, SweepReport, SweepRow};
