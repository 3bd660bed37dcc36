//! Convolutional building blocks, transforms, weights and optimisation.

pub mod adam;
pub mod conv;
pub mod transform;
pub mod weights;

pub use adam::{adam_step, AdamParams, AdamState};
pub use conv::{
    conv3d, conv3d_backward, conv3d_transpose, conv3d_transpose_backward, Activation,
    ConvGradients, Kernel,
};
pub use transform::{
    apply_transform, backward_transform, forward_transform, residual_block_forward, LayerKind,
    LayerSpec, Tape, TransformName, TransformSpec,
};
pub use weights::{ConvParams, TransformWeights, WeightStore};
