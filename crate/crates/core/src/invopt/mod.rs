//! Losses, metrics and the gradient-descent driver.

mod adam;
mod losses;
mod optimize;
mod task;

pub use adam::*;
pub use losses::*;
pub use optimize::*;
pub use task::*;

#[cfg(test)]
mod tests;
