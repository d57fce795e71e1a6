//! Dense arithmetic with hand-written reverse-mode gradients over the fixed
//! op set the architecture needs, plus Adam and the cosine schedule.

mod gradcheck;
mod layers;
pub mod ops;
mod optim;
mod real;
mod tensor;

pub use gradcheck::{grad_check, grad_check_components};
pub use layers::{BlockCache, Linear, Mlp, MlpCache, Parameters, ReGluBlock, RmsNorm};
pub(crate) use layers::join;
pub use ops::{l2_loss, linear_backward, linear_forward, reglu_block, relu, rmsnorm, rmsnorm_backward};
pub use optim::{adam_step, cosine_lr, Adam, AdamConfig, AdamState, LrSchedule};
pub use real::{matmul, matmul_at, matmul_bt, Real};
pub use tensor::Tensor;
