//! Core library for sparse-sensor spatio-temporal modeling.
//!
//! Everything needed to go from a gridded time series plus a handful of
//! point sensors to a trained reconstruction model and, when the encoder
//! carries sparse latent dynamics, a human-readable system of ODEs:
//!
//! * [`field`] — spatio-temporal fields, normalization, chronological
//!   splits, sensor sampling, lag windows, synthetic generators.
//! * [`linalg`] — QR, one-sided Jacobi SVD, randomized SVD for reduced-order
//!   bases.
//! * [`tape`] / [`params`] / [`gradcheck`] — a small eager reverse-mode
//!   autodiff tape over dense matrices, named parameter storage, and a
//!   finite-difference gradient checker.
//! * [`encoder`] / [`decoder`] / [`model`] — recurrent (GRU/LSTM) and
//!   transformer encoders (vanilla attention and SINDy-attention), MLP and
//!   convolutional decoders, and the assembled sensing-to-state model.
//! * [`library`] / [`sindy`] — candidate-function libraries, Euler rollouts,
//!   the SINDy consistency loss, scheduled coefficient pruning, and symbolic
//!   extraction of the learned dynamics.
//! * [`optim`] / [`train`] — Adam/SGD, the training loop with
//!   best-checkpoint selection, evaluation, and sweep enumeration.
//!
//! The crate is `no_std`-compatible (allocation required): disable default
//! features and enable `libm` to build without the standard library. All
//! randomness flows through the seedable, cross-platform generator in
//! [`rng`], so results are bit-reproducible for a given seed and float
//! width.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("shred-core needs either the `std` or the `libm` feature");

pub mod decoder;
pub mod encoder;
pub mod error;
pub mod field;
pub mod gradcheck;
pub mod library;
pub mod linalg;
pub mod mat;
pub mod model;
pub mod optim;
pub mod params;
pub mod real;
pub mod rng;
pub mod sindy;
pub mod tape;
pub mod train;

pub use error::{CoreError, Result};
pub use mat::Matrix;
pub use real::Real;
