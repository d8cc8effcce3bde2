//! Reverse-mode autodiff, toy seq2seq/CTC models and their losses.

pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod model;
pub mod tensor;

pub use graph::{Gradients, Graph, NodeId};
pub use loss::{ctc_min_frames, loss_ctc, loss_xent_smoothed, BLANK};
pub use model::{
    ctc_log_posteriors, example_graph, example_loss, example_loss_and_grads, forward, init,
    transfer_encoder, Descriptor, Example, Head, Input, ModelParams, ModelRole, OwnedInput,
    SizeVariant, BOS, EOS, N_SPECIAL,
};
pub use tensor::Tensor;
