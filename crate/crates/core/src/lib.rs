//! Signature-Wasserstein generative modelling of time series.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: truncated tensor algebra (product, exponential, logarithm, norms)
//! - [`lie`]: Lyndon basis of the free Lie algebra and log-signature coordinates
//! - [`path`]: time-stamped streams, augmentations, p-variation
//! - [`signature`]: signatures, log-signatures, expected signatures and the Sig-W1 distance
//! - [`autodiff`]: tape-based reverse-mode differentiation
//! - [`generators`]: Logsig-RNN and LSTM generators driven by Brownian noise
//! - [`market`]: correlated GBM and rough Bergomi simulators
//! - [`metrics`]: marginal EMD, correlation metric and covariance error grids
//! - [`train`]: Sig-W1 loss, Adam and the training loop
//! - [`ingest`]: price CSV ingestion into rolling log-return windows

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autodiff;
pub mod batch;
pub mod error;
pub mod fsio;
pub mod generators;
pub mod ingest;
pub mod lie;
pub mod market;
pub mod metrics;
pub mod path;
pub mod rng;
pub mod signature;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use lie::{logsig_dim, LogSignature, LyndonBasis};
pub use path::{Augmentation, AugmentationPipeline, Path};
pub use signature::{expected_signature, log_signature, sig_w1, signature, DatasetStats};
pub use tensor::{TensorShape, TruncatedTensor};
