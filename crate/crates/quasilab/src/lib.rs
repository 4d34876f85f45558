//! Numerical laboratory for parabolic p-energy quasiminimizers on finite
//! weighted graphs.
//!
//! A weighted graph with vertex and edge measures plays the role of a metric
//! measure space. On top of it the crate provides upper gradients, Newtonian
//! norms, time mollification, the quasiminimizer energy inequality in its
//! equivalent region forms, an implicit variational solver for the
//! p-parabolic equation, and experiment drivers that probe comparison,
//! uniqueness, and the loss of both for quasiminimizer constants K > 1.

pub mod calculus;
pub mod cli;
pub mod error;
pub mod mesh;
pub mod quasimin;
pub mod report;
pub mod solver;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
