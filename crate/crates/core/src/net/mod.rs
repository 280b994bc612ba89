//! Residual U-net with hand-written reverse-mode gradients.
//!
//! A network is a [`LayerSpec`] program over numbered nodes (node 0 is
//! the input image). Convolutions are lowered to im2col + a blocked matrix
//! product; all reductions use a fixed summation order, so forward and
//! backward passes are bit-reproducible.

mod layers;
mod model;
mod scalar;
mod train;

pub use layers::{FeatureMap, Kernel, LayerKind, LayerSpec, Shape};
pub use model::{
    backward_net, forward_net, forward_tape, image_to_map, loss_and_gradients, map_to_image, mse, Gradients,
    NetworkParams, ParamSlot, Tape, TapeNode,
};
pub use scalar::Scalar;
pub use train::{
    augment, clip_gradients, flip, mean_snr, train, train_with, Abort, EpochRecord, TrainConfig, TrainReport,
};
