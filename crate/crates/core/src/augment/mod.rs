//! Coordinate and condition perturbations that synthesize matching values:
//! the value-preserving baseline, lattice-interpolated spatial pairs and
//! two-stage spatio-conditional pairs.

mod noise;
mod pairs;

pub use noise::{truncated_gauss, NoiseSpec, Truncation, MAX_TRIES};
pub use pairs::{
    cell_spacing, idw_weights, interp_member, vc_augment, vp_s, vp_sc, AugmentConfig, Augmenter, ConditionIndex,
    Strategy, COINCIDENT, DEFAULT_K,
};
