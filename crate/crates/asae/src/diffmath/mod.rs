//! Minimal reverse-mode automatic differentiation with dense layers, softmax
//! policies, categorical sampling, and an Adam optimizer. All values are f64;
//! tapes are rebuilt per forward pass.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod mlp;
pub mod sample;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use graph::{ComputationGraph, Gradients, NodeId};
pub use mlp::{
    entropy, forward_mlp, forward_on_tape, log_softmax, softmax, Activation, DenseLayer,
    MlpParams, MlpTapeParams,
};
pub use sample::{argmax, sample_categorical};
pub use tensor::Tensor;
