//! Finite-volume simulator for a regularized chemotaxis-Navier-Stokes system
//! with discrete energy, mass and positivity monitors.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod expr;
pub mod fluid;
pub mod grid;
pub mod linalg;
pub mod model;
pub mod operators;
pub mod output;
pub mod stepper;
pub mod sweep;

pub use error::{Error, Result};
