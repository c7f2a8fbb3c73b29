//! Budget-bounded image protection toolkit.
//!
//! The pipeline perturbs images with a single forward pass of a wavelet
//! U-Net so that every output stays within a hard per-pixel budget
//! (`|x_adv - x| <= epsilon` elementwise), while the training objective
//! pushes the image's latent representation (under a frozen surrogate
//! encoder) toward a fixed target image. Expectation-over-transformations
//! sampling (differentiable JPEG, Gaussian blur) makes the perturbation
//! survive common attacker-side preprocessing.
//!
//! Modules are deliberately self-contained: tensors are plain `f64`
//! buffers, the network layers carry their own hand-written backward
//! passes, and every randomized component takes an explicit seed.

pub mod blur;
pub mod checkpoint;
pub mod config;
pub mod eot;
pub mod generator;
pub mod imagecore;
pub mod jpeg;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod optimizer;
pub mod parallel;
pub mod robustness;
pub mod spectrum;
pub mod surrogate;
pub mod synth;
pub mod tensor;
pub mod trainer;
pub mod wavelet;

use thiserror::Error;

/// Unified error type for the whole pipeline.
///
/// The CLI maps `Config`, `Input`, `Incompatibility`, and `Contract`
/// errors to exit code 2 (usage/config) and everything else to exit
/// code 1 (runtime failure).
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("incompatible checkpoint: {0}")]
    Incompatibility(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors that indicate a misuse of the tool rather than a
    /// failure while running it.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Input(_) | Error::Incompatibility(_) | Error::Contract(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
