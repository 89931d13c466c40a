//! Numerical laboratory for the training dynamics of generative adversarial
//! networks at desk scale.
//!
//! The crate is split into four layers:
//!
//! - [`diffcore`]: dense reverse-mode autodiff, MLPs and first-order optimizers.
//! - [`manifolds`]: distributions supported on low-dimensional sets, noise models
//!   and rasterization onto regular grids.
//! - [`divergence`]: KL / JSD / total variation on grids, exact Wasserstein-1 on
//!   empirical measures, the optimal discriminator and the Wasserstein bounds.
//! - [`gandyn`]: GAN losses, discriminator training and the gradient probes.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Per-axis loops over several parallel arrays read better with an index.
#![allow(clippy::needless_range_loop)]

pub mod diffcore;
pub mod divergence;
pub mod error;
pub mod gandyn;
pub mod manifolds;
pub mod rng;

pub use error::{LabError, Result};
