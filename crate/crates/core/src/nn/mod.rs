//! Minimal from-scratch deep-learning kernel: NHWC tensors, the fixed
//! two-head layer stack with forward/backward passes, He-normal init,
//! Adam, the cyclical triangular learning-rate schedule, and a binary
//! checkpoint format.

pub mod adam;
pub mod checkpoint;
pub mod init;
pub mod layers;
pub mod loss;
pub mod model;
pub mod schedule;
pub mod tensor;

pub use adam::AdamState;
pub use model::{
    backward, backward_to_conv_features, forward_infer, forward_train, ForwardCache,
    ForwardOutput, ModelGrads, ModelParams, Mode, NetConfig,
};
pub use schedule::CyclicLrSpec;
pub use tensor::Tensor4;
