//! Learnable grids and lines, multilinear queries, and the parameter-free
//! transforms that resample, concatenate and lift them onto one lattice.

mod grid;
mod pi;
mod plan;

pub use grid::{interp_lattice, interp_query, interp_query_backward, lattice_coord, FeatureGrid, MAX_DIM};
pub(crate) use grid::{locate_axis, AxisSpan, Corners};
pub(crate) use grid::unflatten;
pub use pi::{
    concat_channels, pe_backward_row, pe_lift, pe_lift_row, split_condition, ssr_upsample, ssr_upsample_backward,
    unify_condition, unify_spatial, ChannelBlock, ChannelManifest, FeatureLineSet, UnifiedStructure,
};
pub(crate) use pi::split_channels;
pub use plan::{SourceLayout, Tap, UnifyPlan};
