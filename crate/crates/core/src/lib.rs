//! Simulation and verification toolkit for the fast-reaction (relaxation)
//! approximation of the triangular SKT cross-diffusion system.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod integrator;
pub mod linsolve;
pub mod model;
pub mod operators;

pub use error::{Error, Result};
