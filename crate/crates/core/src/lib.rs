//! Spectral simulation and potential-well classification for the critical
//! nonlocal heat equation
//!
//! ```text
//! u_t - Δu = (∫ |u(y)|^p / |x - y|^μ dy) |u|^{p-2} u,   p = 6 - μ,
//! ```
//!
//! on the box `(0, L)^3` with homogeneous Dirichlet data.

pub mod classifier;
pub mod config;
pub mod error;
pub mod evolution;
pub mod functionals;
pub mod grid;
pub mod ground_state;
pub mod io;
pub mod riesz;
pub mod verify;

pub use error::{Error, Result};
