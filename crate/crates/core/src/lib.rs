//! Shift-invariant pooling for convolutional audio taggers.
//!
//! The crate is `no_std` (with `alloc`) and contains everything that is pure
//! computation: a dense tensor type with a reverse-mode tape, the pooling
//! layers (dense max-pool, low-pass filtered subsampling with binomial or
//! softmax-constrained trainable kernels, adaptive polyphase sampling), a
//! VGG-style network builder, the training loop, ranking metrics and the
//! time/frequency shift protocols. IO lives in the `shiftpool` crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod aapt;
pub mod error;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod patch;
pub mod pooling;
pub mod rng;
pub mod shift;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Padding, Tensor};
