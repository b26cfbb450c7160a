//! Minimal double-precision tensor engine: reverse-mode autodiff over a
//! recorded graph, the convolution/attention layers needed by small weak
//! learners, ADAM/AdamW, and a binary parameter checkpoint format.

pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod kernels;
pub mod optim;
pub mod params;
pub mod tensor;

pub use encoder::{encoder_forward, encoder_logits, init_encoder, AttentionTrace, EncoderConfig};
pub use error::{NnError, Result};
pub use graph::{Bound, Graph, Var};
pub use kernels::{conv2d_forward, maxpool2d_forward};
pub use optim::{adam_step, AdamConfig};
pub use params::{AdamState, ParamStore};
pub use tensor::Tensor;
