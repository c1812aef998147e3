//! Dense numerics: matrices, the feed-forward network, cross-entropy,
//! Adam, and a finite-difference gradient checker.

mod gradcheck;
mod loss;
mod matrix;
mod network;
mod optim;

pub use gradcheck::finite_diff_check;
pub use loss::softmax_xent;
pub use matrix::Matrix;
pub use network::{
    backward, forward, predict, trunk_features, Activation, Dense, DenseGrad, ForwardPass, Gradients, LayerSpec,
    NetworkParams, NetworkSpec, SplitLayerSpec,
};
pub use optim::{lr_schedule, AdamState, TrainConfig};
