//! Fidelity metrics, inference timing and the conditional and
//! spatio-conditional evaluation tasks.

mod bench;
mod harness;
mod metrics;

pub use bench::{benchmark_inference, BenchReport};
pub use harness::{
    eval_conditional, eval_spatio_conditional, member_metrics, reconstruct, EvalOptions, EvalOutcome, EvalReport,
    MemberRow, MetricSpace, Reconstruction, ReportSection, CHUNK,
};
pub use metrics::{
    cap_psnr, dynamic_range, mse, psnr, psnr_from_mse, rel_l2, ssim, SsimWindow, PSNR_CAP, SSIM_K1, SSIM_K2,
};
