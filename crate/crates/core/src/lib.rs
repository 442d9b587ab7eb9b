//! Greedy robust kernel ridge regression.
//!
//! Observations are modeled as `y = f(x) + u + e` with `f` in a Gaussian RKHS,
//! `u` a sparse vector of outliers, and `e` bounded noise. The solver grows
//! the outlier support one index at a time and refits a regularized
//! least-squares problem after each addition.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod denoise;
pub mod error;
pub mod experiments;
pub mod imageio;
pub mod kernel;
pub mod noise;
mod scalar;
pub mod solver;
pub mod theory;

pub use error::{Error, Result};
pub use kernel::{cross_kernel, gram_matrix, rbf_eval, KernelParams, PointSet};
pub use scalar::Real;
pub use solver::{
    build_design, chol_extend, chol_init, kgard_fit, predict, regularized_ls_solve, select_index, Dataset,
    DesignSystem, FixedThreshold, IncrementalFactor, Kgard, KgardConfig, KgardSolution, Regularizer, StopNorm,
    StoppingThreshold,
};

pub use theory::{
    oracle_selections, residual_oracle, spectral_diagnostics, theorem_check, BoundReport, OracleIntermediates,
    SpectralDiagnostics,
};

pub use denoise::{denoise_image, psnr, RoiConfig};
pub use imageio::{read_pgm, write_pgm, GrayImage};

// Double-precision instantiations.
pub type Kgard64 = Kgard<f64>;
pub type KgardConfig64 = KgardConfig<f64>;
pub type KgardSolution64 = KgardSolution<f64>;
pub type DesignSystem64 = DesignSystem<f64>;
pub type PointSet64 = PointSet<f64>;
pub type KernelParams64 = KernelParams<f64>;
pub type Dataset64 = Dataset<f64>;
pub type SpectralDiagnostics64 = SpectralDiagnostics<f64>;

// Single-precision instantiations.
pub type Kgard32 = Kgard<f32>;
pub type KgardConfig32 = KgardConfig<f32>;
pub type KgardSolution32 = KgardSolution<f32>;
