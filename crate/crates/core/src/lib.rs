//! Perona-Malik nonlinear diffusion filters.
//!
//! The crate provides the isotropic explicit and semi-implicit schemes, the
//! original anisotropic scheme, a Gaussian-regularized variant and a linear
//! heat-equation baseline, together with checks of the discrete
//! well-posedness properties of the operators and the runs they produce.

pub mod analysis;
pub mod cli;
pub mod diffusivity;
pub mod error;
pub mod grid;
pub mod io;
pub mod operator;
pub mod schemes;
pub mod solver;

pub use analysis::{
    add_gaussian_noise, l1_distance, variance, verify_invariants, verify_operator_properties, DenoiseExperiment,
    DenoiseResult, FieldStats, MetricsLog, MetricsRecord,
};
pub use diffusivity::{DiffusivityKind, DiffusivityModel, Regime};
pub use error::{DiffusionError, Result};
pub use grid::{Axis, Dims, ScalarField, Spacing};
pub use operator::{DiffusionOperator, GaussianKernel};
pub use schemes::{stability_bound, stability_bound_for, RunOutput, Runner, SchemeConfig, SchemeKind};
