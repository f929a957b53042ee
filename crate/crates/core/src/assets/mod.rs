//! Meshes, images, environment maps and scene files.

mod image;
mod mesh;
pub(crate) mod scene;
mod sky;

pub use image::*;
pub use mesh::*;
pub use scene::*;
pub use sky::*;
