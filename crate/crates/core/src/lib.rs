//! Numerical laboratory for the cubic nonlinear Schrödinger equation
//! `i u_t + Δu = ρ|u|²u` on the torus `T^d` with Gaussian-randomized initial
//! data.
//!
//! The crate works entirely in frequency space on a truncated lattice
//! `|n_i| ≤ M`. See the module docs for conventions.

pub mod counting;
pub mod error;
pub mod field;
pub mod evolution;
pub mod lattice;
pub mod norms;
pub mod probes;
pub mod random_data;
pub mod solver;
mod spectral;
pub mod stats;

pub use error::{Error, Result};
pub use field::{FourierField, ModelParams, SpaceTimeField, TimeGrid};
pub use lattice::{DyadicBlock, LatticeSpec};
