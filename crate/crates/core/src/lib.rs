//! Bending simulator for single- and bilayer plates undergoing large
//! isometric deformations.
//!
//! The plate midsurface is discretized with discontinuous tensor-product
//! Lagrange elements on a uniformly refined rectangular mesh. The bending
//! energy is an interior-penalty form with weakly (Nitsche) enforced clamping,
//! the isometry constraint is linearized per cell and enforced with a
//! piecewise-constant symmetric Lagrange multiplier, and equilibria are
//! computed by a semi-implicit H²-gradient flow whose saddle-point step is
//! solved through a Schur complement with conjugate gradients.
//!
//! Crate layout:
//! - [`mesh`]: rectangular meshes, edge skeleton, boundary markings
//! - [`space`]: reference basis, quadrature, dof layout, field evaluation
//! - [`assembly`]: operators (metric, stiffness, constraint, forces) and energies
//! - [`flow`]: factorization, Schur/CG multiplier solve, gradient-flow loop
//! - [`scenario`]: built-in experiment registry, configuration, run driver
//! - [`vtk`], [`checkpoint`]: output formats

// Assembly kernels index fixed 2- and 3-component dimensions; iterator
// rewrites obscure the tensor algebra there.
#![allow(clippy::needless_range_loop)]

pub mod assembly;
pub mod checkpoint;
pub mod flow;
pub mod mesh;
pub mod scenario;
pub mod space;
pub mod vtk;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("boundary marking error: {0}")]
    Marking(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error(
        "Schur conjugate gradient stagnated after {iterations} iterations \
         (residual {residual:.3e}, target {target:.3e})"
    )]
    CgStagnation {
        iterations: usize,
        residual: f64,
        target: f64,
        /// Residual 2-norm after each iteration, for post-mortems.
        history: Vec<f64>,
    },

    #[error("gradient flow diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("unknown scenario `{name}`; available: {available}")]
    UnknownScenario { name: String, available: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
