//! Statistical checks of the randomized misfit approach: discrepancy
//! statistics, a dense linearized oracle, convergence and bias studies.

mod morozov;
mod oracle;
mod studies;

pub use morozov::{
    discrepancy_quotient, discrepancy_tau, morozov_range, morozov_trial, morozov_verify, trial_seed,
    tune_sketch_size, MorozovRecord, MorozovSummary,
};
pub use oracle::{LinearOracle, OracleProblem, OracleSolution, MAX_ORACLE_DIM};
pub use studies::{bias_check, convergence_point, convergence_study, BiasCheck, ConvergencePoint, ConvergenceStudy};
