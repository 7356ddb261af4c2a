//! Co-primary spectrum sharing between operators with D2D traffic.
//!
//! Stochastic-geometry rate models, operator utilities under box constraints,
//! best-response and Jacobi-play dynamics, and equilibrium analysis.

// `!(x > y)` guards are kept so NaN falls on the rejecting side.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod game;
pub mod operator;
pub mod quad;
pub mod stochgeom;

pub use error::{Error, Result};
