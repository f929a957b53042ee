//! Reverse-mode gradients of a render with respect to shape, material and
//! lighting, and a finite-difference harness to verify them.
//!
//! Adjoints are hand-written for the fixed pipeline rasterize → shade →
//! compose. Monte Carlo gradients treat the sampled directions and their
//! densities as constants, so they are exact derivatives of the realized
//! estimator.

mod backward;
mod check;
mod params;

pub use backward::{backward, render_backward, render_recorded, Recorded};
pub use check::{finite_diff_check, relative_error, render_frozen, FdEntry, FdReport, LinearLoss, RenderLoss};
pub use params::{
    roughness_from_param, roughness_to_param, GradRecord, LightingLayout, ParamKind, ParamLayout, ParamSet, LOBE_PARAMS,
};
