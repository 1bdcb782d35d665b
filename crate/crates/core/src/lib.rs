//! Multi-token prediction at desk scale.
//!
//! A transformer trunk feeds `n` output heads, head `i` predicting the token
//! `i` positions ahead. The crate contains everything needed to train and
//! study such models on a laptop CPU:
//!
//! - [`tensor`]: a small reverse-mode autodiff over `f64` tensors with
//!   explicit control over when logit buffers live and die.
//! - [`model`]: the shared trunk, five head architectures and the shared
//!   unembedding, with layer-count parameter matching across `n`.
//! - [`training`]: the multi-token loss, the sequential per-head
//!   forward/backward schedule, AdamW with warmup + cosine decay.
//! - [`datagen`]: polynomial arithmetic over F₇[X]/(X⁵), a two-token-name
//!   induction corpus and byte-level text.
//! - [`decoding`]: greedy and lossless self-speculative decoding.
//! - [`diagnostics`]: entropy decompositions, relative mutual information
//!   and the implicit-weight counter for choice points.
//! - [`checkpoint`], [`config`], [`eval`], [`cli`]: persistence and the
//!   `mtp` command-line front end.
//!
//! The `examples/` directory has one runnable program per capability.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod decoding;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{MtpError, Result};
pub use model::{HeadArch, ModelConfig, MultiTokenModel};
pub use tensor::{Graph, NodeId, Tensor};
