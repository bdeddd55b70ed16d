//! # brcgan-core
//!
//! Bilevel ("leader/follower") training for adversarial generative models at
//! desk scale, built around a best-response constraint: the discriminator
//! parameters that the generator objective sees are an approximate maximizer
//! of the discriminator's own loss for the current generator.
//!
//! The crate bundles everything the training problem needs, with no IO:
//!
//! - [`tape`]: a minimal reverse-mode gradient engine for batched MLP
//!   objectives over flat parameter vectors (dense affine layers, leaky ReLU,
//!   stable log-sigmoid, batch mean/variance reductions).
//! - [`params`] / [`adam`] / [`fd`]: flat parameter vectors with layout
//!   metadata and a text checkpoint codec, the Adam update rule, and
//!   finite-difference Hessian-vector products.
//! - [`models`]: generator and split-discriminator MLPs (the discriminator is
//!   a feature stack plus a linear head so batch feature statistics can be fed
//!   to the head).
//! - [`objectives`]: leader/follower loss pairs for the supported GAN
//!   flavors, including the feature-statistics-regularized discriminator loss.
//! - [`bilevel`]: the IGA trainer (inner maximization + closed-form response
//!   gradient), the alternating baseline, and CG/Neumann implicit-gradient
//!   baselines, with per-step cost profiling.
//! - [`synthdata`]: 2D ring and 3D cube mixture-of-Gaussians targets.
//! - [`metrics`]: data-space Fréchet distance, histogram Jensen–Shannon
//!   divergence, and mode-coverage counting.
//!
//! Everything is `f64`, single-threaded per training run, and deterministic:
//! a run is a pure function of its configuration and seed.
//!
//! The crate is `no_std`-compatible (requires `alloc`); the default `std`
//! feature only enables faster matrix kernels via runtime CPU detection and
//! `std::error::Error` conveniences. File formats, CSV emission and the CLI
//! live in the companion `brcgan-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod adam;
pub mod bilevel;
pub mod error;
pub mod fd;
pub mod mathx;
pub mod matrix;
pub mod metrics;
pub mod models;
pub mod objectives;
pub mod params;
pub mod rng;
pub mod synthdata;
pub mod tape;
pub mod toys;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use params::{Layout, ParamVector};
