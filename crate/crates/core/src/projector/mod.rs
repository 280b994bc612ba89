//! Parallel-beam geometry, the discrete Radon transform and its adjoint.

mod certify;
mod geometry;
mod radon;

pub use certify::{
    central_impulse_response, certify_normal_convolution, impulse_response, radial_spectrum, CertReport, NormalOf,
    NormalOperator, RadonNormal, SpectralBand,
};
pub use geometry::{Geometry, Image, Sinogram};
pub use radon::{adjoint, adjoint_onto, forward, IdentityOperator, LinearOperator, Radon};
