//! Estimators for nested expectations
//! `I = E_theta[ f( E_{X|theta}[ g(X, theta) ] ) ]`.
//!
//! The crate provides nested kernel quadrature (two stacked regularized
//! kernel-quadrature rules) and its conditional variant, the standard
//! Monte Carlo baselines (nested MC with i.i.d. or scrambled-Sobol points,
//! antithetic multilevel MC, multilevel kernel quadrature), built-in
//! benchmark problems with known values, and a convergence-study harness
//! with CSV output and log-log rate fitting. The `nestquad` binary exposes
//! the harness on the command line.

pub mod baselines;
pub mod embeddings;
pub mod harness;
pub mod kernels;
pub mod nested;
pub mod problems;
pub mod quadrature;
pub mod sampling;
pub mod special;
