//! Nonlocal vector calculus with power-law kernels.
//!
//! This crate implements the nonlocal (peridynamic-style) divergence,
//! gradient, and curl operators built from a radial power-law influence
//! function over a finite horizon, together with the machinery needed to
//! study how fast they converge to the classical operators as the
//! horizon shrinks: singularity-absorbing ball quadrature, analytic test
//! fields with exact derivatives through third order, L^q error norms
//! and Sobolev norms, delta-sweep convergence reports with observed-order
//! fits, and a grid-based Hardy-Littlewood maximal function.
//!
//! The `nlcalc` binary exposes the experiment harness; see the crate
//! README for CLI usage.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod fields;
pub mod kernel;
pub mod operators;
pub mod quadrature;

pub use error::{Error, Result};
pub use kernel::Kernel;
pub use quadrature::{build_rule, BallQuadratureRule};
