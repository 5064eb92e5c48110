//! Mutual-information preserving inverse networks (MIP-IN) for attributing
//! the predictions of small feed-forward classifiers.
//!
//! The crate covers the whole pipeline: dense tensors and kernels, classifier
//! training and tracing, layer-wise inverse fitting, attribution, baseline
//! saliency methods, evaluation metrics and a command-line front end.

mod codec;
pub mod baselines;
pub mod cli;
pub mod data;
pub mod error;
pub mod heatmap;
pub mod metrics;
pub mod mipin;
pub mod net;
pub mod pipeline;
pub mod tensor;

pub use codec::hex;
pub use error::{Error, Result};
pub use tensor::{SwitchMask, Tensor};
