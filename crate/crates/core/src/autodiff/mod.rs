//! Dense `f64` arrays with reverse-mode automatic differentiation, the
//! layer primitives the generator is built from, Adam, and the named-array
//! checkpoint container.

mod adam;
pub mod checkpoint;
mod gemm;
mod init;
pub mod nn;
pub mod ops;
mod tensor;

pub use adam::{adam_step, clip_grad_norm, AdamState};
pub use checkpoint::{ArrayBundle, NamedArray};
pub use init::{kaiming_normal, seeded_rng};
pub use nn::{batchnorm, conv2d, deconv2d, linear, RunningStats};
pub use ops::{relu, sigmoid};
pub use tensor::{grad_enabled, no_grad, Tensor};

pub(crate) use tensor::GradCtx;
