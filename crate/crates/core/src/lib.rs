//! Differentiable choke-flow models for virtual flow metering.
//!
//! The crate is `no_std` (with `alloc`): a reverse-mode autodiff tape, choke
//! physics, small MLPs, the three model kinds (mechanistic, hybrid,
//! data-driven), MAP-regularized training, preprocessing of raw well series
//! and evaluation metrics. File formats, the CLI and parallel drivers live in
//! the companion `vfm` crate.

#![no_std]
// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod autodiff;
pub mod error;
pub mod estimation;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod physics;
pub mod pipeline;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
