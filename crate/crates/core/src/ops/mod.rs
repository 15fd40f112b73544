//! Numeric kernels behind the tape operations.
//!
//! Every function here is a plain forward or backward routine over
//! [`Tensor`](crate::Tensor) values; the tape in [`crate::tape`] records which
//! of them to call during the reverse sweep.

pub mod conv;
pub mod elementwise;
pub mod norm;
pub mod pool;

pub use conv::{conv2d, depthwise_conv2d, Conv2dGeometry, DepthwiseKernel};
pub use norm::{batch_norm_eval, batch_norm_train, BatchNormStats};
pub use pool::{dense_max_pool, gather_strided};
