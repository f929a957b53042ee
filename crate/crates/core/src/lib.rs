//! Differentiable deferred rendering: rasterize a mesh into G-buffers, shade
//! them with a Monte Carlo or a spherical-Gaussian integrator, and push
//! image-space gradients back to material, lighting and vertex parameters.

pub mod assets;
pub mod brdf;
pub mod diffgrad;
mod error;
pub mod invopt;
pub mod mathkit;
pub mod raster;
pub mod sgalg;
pub mod shade;

pub use error::{Error, Result};
