//! Rate-distortion tooling for learned image codecs.
//!
//! * [`rd_model`]: per-image quality/rate/distortion measurements.
//! * [`allocator`]: choose one quality level per image under a mean-bpp budget.
//! * [`loss_kernel`]: relativistic patch discriminator and GAN loss arithmetic.
//! * [`rate_controller`]: target-rate λ switch and rate-constrained loss.
//! * [`report`]: dataset-level summaries in CSV or markdown.
//! * [`io`] and [`cli`]: file formats and the command-line front end.

pub mod allocator;
pub mod cli;
pub mod io;
pub mod loss_kernel;
pub mod rate_controller;
pub mod rd_model;
pub mod report;

pub use allocator::{
    solve_brute_force, solve_exact, solve_lagrangian, sweep_targets, AllocError, BudgetSpec,
    SolverReport,
};
pub use rd_model::{Assignment, ImageRecord, QualityOption, RdTable, SolverKind};
