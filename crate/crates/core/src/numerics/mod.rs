//! Shared numerical building blocks.

mod fft;
mod fit;
mod rng;
mod tensor;

pub use fft::{fft, fft2, fft_1d, is_power_of_two, next_power_of_two, Complex};
pub use fit::{affine_fit, AffineFit};
pub use rng::Rng;
pub use tensor::Tensor;
