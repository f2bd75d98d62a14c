//! Laplace transforms of occupation times for diffusions refracted at
//! functionals of their running maximum, with the bankruptcy time of an
//! Omega risk model with surplus-dependent tax as the main application.
//!
//! Transforms are evaluated by a single-sweep quadrature over the scale
//! function and the Sturm–Liouville pair of the diffusion. A Monte Carlo
//! path simulator provides an independent check, and a numerical Laplace
//! inverter turns bankruptcy transforms into distribution functions.

pub mod diffusion;
pub mod eigen;
pub mod error;
pub mod func;
pub mod inversion;
pub mod occupation;
pub mod quadrature;
pub mod scenarios;
pub mod simulator;

pub use error::{Error, Result};
