//! Differentiable toy generators `x = g(theta, view)`.
//!
//! [`identity_generator`] hands the parameter vector straight through as
//! the latent. The splat generator renders a [`SplatScene`] to color, depth
//! and coverage images with exact reverse-mode gradients.

mod raster;
mod splat;
mod view;

pub use raster::{
    backward, footprint, footprint_deriv, pixel_scale_map, render, RenderOutput, SplatGrad,
    CUTOFF_Q,
};
pub use splat::{Splat, SplatScene};
pub use view::{Mat2, ViewParam};

use crate::ddim::Latent;
use crate::error::Result;

/// `theta` itself as a clean latent.
pub fn identity_generator(theta: &[f64]) -> Result<Latent> {
    Latent::new(theta.to_vec(), 0)
}

/// Reverse pass of the identity generator: the Jacobian is the identity.
pub fn identity_backward(latent_grad: &[f64]) -> Vec<f64> {
    latent_grad.to_vec()
}
