//! Symmetry-reduced reinforcement learning control of the Kuramoto–Sivashinsky
//! equation, with the supporting solver, equilibrium and LQR machinery.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actuation;
pub mod audit;
pub mod env;
pub mod equilibria;
pub mod error;
pub mod io;
pub mod lqr;
pub mod rl;
pub mod rng;
pub mod spectral;
pub mod symmetry;

pub use error::{Error, Result};
