//! Spectral-Galerkin solver for a fractional Cahn-Hilliard system with
//! logarithmic and double-obstacle potentials, and an adjoint-based optimal
//! control engine built on the deep-quench approximation.

pub mod adjoint;
pub mod analysis;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod optimizer;
pub mod potentials;
pub mod scenario;
pub mod spectral;
pub mod state;

pub use error::{Error, Result};
