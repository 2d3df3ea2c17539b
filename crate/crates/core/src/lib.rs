//! Randomized misfit approach for PDE-constrained inverse problems.
//!
//! The data-misfit vector of a MAP objective is compressed by a random
//! subgaussian sketch before the reduced problem is solved with inexact
//! Gauss-Newton-CG. Includes the elliptic forward model, a Gaussian prior,
//! and tools to check the statistical guarantees of the sketched problem.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod objective;
pub mod optimizer;
pub mod pde;
pub mod prior;
pub mod sketch;

pub use error::{Result, RmaError};
pub use experiment::ExperimentConfig;
pub use objective::{InverseProblem, Objective};
pub use optimizer::{minimize, NewtonProblem, SolveReport, SolverConfig};
pub use pde::{ForwardProblem, Mesh};
pub use prior::GaussianPrior;
pub use sketch::{SketchDistribution, SketchMatrix};
