//! Small dense-network engine in double precision.

pub mod activation;
pub mod layer;
pub mod loss;
pub mod matrix;
pub mod optim;

pub use activation::{relu, relu_backward, tanh_act, tanh_backward, Activation};
pub use layer::{he_init, zero_grads, DenseLayer, LayerGrad};
pub use loss::{cross_entropy_per_row, softmax, softmax_cross_entropy};
pub use matrix::{gemm, Matrix};
pub use optim::{lr_schedule, SgdState, DEFAULT_MOMENTUM, DEFAULT_WEIGHT_DECAY};
