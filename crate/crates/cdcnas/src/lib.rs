//! Central-difference 3-D convolutions and two-stage differentiable
//! architecture search for multi-rate, multi-modal video classification,
//! on top of a small reverse-mode autodiff engine.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`], [`ops`], [`tape`] — dense (N, C, T, H, W) tensors, primitive
//!   kernels, and the gradient tape.
//! * [`cdc`] — the central-difference convolution family (ST / T / TR) in
//!   decomposed form; [`oracle`] keeps the literal loop forms for checks.
//! * [`search`] — mixed-operation supernets for multi-rate backbones and
//!   cross-modal lateral connections, plus genotype derivation.
//! * [`engine`] — bilevel search, training, evaluation, checkpoints.
//! * [`data`] — synthetic two-modality gesture clips and the on-disk format.
//! * [`config`], [`report`] — experiment configuration and study harnesses.

pub mod cdc;
pub mod config;
pub mod data;
pub mod elem;
pub mod engine;
pub mod error;
pub mod nn;
pub mod ops;
pub mod oracle;
pub mod params;
pub mod pipeline;
pub mod report;
pub mod search;
pub mod tape;
pub mod tensor;

pub use elem::Elem;
pub use error::{Error, Result};
pub use tensor::{Shape5, Tensor};
