//! Sparse-view parallel-beam CT reconstruction kernels.
//!
//! Everything in this crate is pure computation over `alloc` containers:
//!
//! * [`numerics`]: tensors, radix-2 FFT, a portable PRNG and the affine fit
//!   behind the SNR metric.
//! * [`phantom`]: random ellipse phantoms with exact analytic sinograms.
//! * [`projector`]: a Joseph-style Radon transform, its exact adjoint, and a
//!   harness that checks the normal operator `H*H` behaves as a convolution.
//! * [`fbp`]: ramp filtering + back projection, and the image-domain
//!   deconvolution form.
//! * [`sparse`]: Haar-wavelet ISTA/FISTA and TV-regularized ADMM.
//! * [`net`]: a small residual U-net with reverse-mode gradients and SGD.
//! * [`metrics`]: the affine-calibrated SNR used to rank reconstructions.
//!
//! File formats, experiment orchestration and the CLI live in the `ctrecon`
//! crate.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

mod error;
pub(crate) mod math;

pub mod fbp;
pub mod metrics;
pub mod net;
pub mod numerics;
pub mod phantom;
pub mod projector;
pub mod sparse;

pub use error::{Error, Result};
pub use numerics::{Rng, Tensor};
pub use projector::{Geometry, Image, Sinogram};
