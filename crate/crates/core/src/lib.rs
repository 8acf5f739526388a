//! FocalGatedNet: dynamic contextual focus attention and a convolutional
//! gated linear unit inside a Transformer encoder-decoder, with the data,
//! training and evaluation plumbing around it.

pub mod attention;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiment;
pub mod glu;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use attention::{AttentionConfig, AttentionMask, FocusScope, MaskMode};
pub use autodiff::{Gradients, Tape, Var};
pub use error::{CheckpointError, DataError, Error, Result};
pub use model::{Ablation, Forecaster, Model, ModelConfig, Variant};
pub use tensor::{Scalar, Tensor};
