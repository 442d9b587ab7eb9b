//! The greedy robust regression solver.
//!
//! Each step solves a regularized least-squares problem over the kernel
//! coefficients, the bias, and the identity columns selected so far, then
//! activates the identity column at the largest absolute residual. The
//! normal matrix is factored once and extended by one Cholesky row per step.

mod design;
mod factor;
mod fit;

pub use design::{build_design, DesignSystem, Regularizer};
pub use factor::{chol_extend, chol_init, regularized_ls_solve, IncrementalFactor, EXTEND_PIVOT_FLOOR};
pub use fit::{
    kgard_fit, predict, select_index, Dataset, FixedThreshold, Kgard, KgardConfig, KgardSolution, StopNorm,
    StoppingThreshold,
};
