//! Point-wise residual refinement of unified structures, the lazy per-batch
//! path used in training, and baking into a frozen query structure.

mod branch;
mod stack;

pub use branch::{Branch, BranchCache};
pub use stack::{refine_structure, RefinerStack, StackCache};
