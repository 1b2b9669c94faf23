//! Recurrent video masked-autoencoder at desk scale.
//!
//! A self-contained implementation of a recurrent video representation
//! learner: frames are patchified and encoded by a shared vision
//! transformer, a GRU-gated transformer core aggregates them over time, and
//! a cross-attention decoder reconstructs heavily masked future frames from
//! the recurrent features under a plain pixel L2 loss. The crate also ships
//! the synthetic video corpora, the training loop, and the evaluation suite
//! (label propagation, long-horizon stability, feature visualization, and
//! recurrent-vs-attention cost accounting) used to verify the model's
//! behavioral claims on a single CPU.

pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod optim;
pub mod ppm;
pub mod rng;
pub mod scalar;
pub mod recurrent;
pub mod reference;
pub mod tape;
pub mod trainer;
pub mod tensor;
pub mod tokenizer;
pub mod video;

pub use error::{Error, Result};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
