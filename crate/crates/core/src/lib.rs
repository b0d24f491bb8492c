//! Proximal splitting solvers for graph-structured convex optimization.
//!
//! The crate centers on the preconditioned forward-Douglas-Rachford iteration
//! over an edge-block splitting of graph total-variation problems, with its
//! generalized forward-backward specialization and a preconditioned
//! primal-dual solver as comparators. Problem constructors, proximity
//! operators in diagonal metrics, evaluation metrics and brute-force oracles
//! round out the suite.
//!
//! All numerics are generic over the scalar type through [`scalar::Real`];
//! the aliases at the crate root pin the `f64` instantiations used by the
//! command-line driver and the test suites.

pub mod error;
pub mod graph;
pub mod metrics;
pub mod oracle;
pub mod ppd;
pub mod problems;
pub mod prox;
pub mod scalar;
pub mod smooth;
pub mod solver;

pub use error::{Error, Result};
pub use scalar::Real;

/// `f64` instantiations used by the CLI and the test suites.
pub type Graph64 = graph::Graph<f64>;
pub type DiagonalOperator64 = graph::DiagonalOperator<f64>;
pub type SplitWeights64 = graph::SplitWeights<f64>;
pub type DenseOperator64 = smooth::DenseOperator<f64>;
pub type SmoothTerm64 = smooth::SmoothTerm<f64>;
pub type SplitProblem64 = solver::SplitProblem<f64>;
pub type SolverState64 = solver::SolverState<f64>;
pub type SolveConfig64 = solver::SolveConfig<f64>;
pub type ConvergenceLog64 = solver::ConvergenceLog<f64>;
pub type EegInstance64 = problems::EegInstance<f64>;
pub type LabelingInstance64 = problems::LabelingInstance<f64>;
