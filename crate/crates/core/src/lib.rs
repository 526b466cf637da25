//! Core library for separating the drawing layers of layered sketches
//! (red chalk, diluted red chalk, iron-gall ink) from hyperspectral cubes.
//!
//! The crate is organised around the stages of the processing pipeline:
//!
//! - [`cube`] — the hyperspectral cube data model, ENVI-style BSQ file I/O,
//!   simulated RGB derivation and feature-stack concatenation.
//! - [`preprocess`] — sensor sensitivity normalization, illumination-field
//!   correction and spectral focus stacking.
//! - [`chromatic`] — the hyper-hue / saturation / intensity transform built
//!   on the chromatic-hyperplane projection.
//! - [`morpho`] — component trees, attribute thinning/thickening and the
//!   AP → MAP → EMAP descriptor construction.
//! - [`dimred`] — PCA with explained-variance retention.
//! - [`learn`] — a deterministic random forest, the repeated train/test
//!   sampling protocol and OA/AA/Kappa metrics.
//! - [`phantom`] — a synthetic generator of layered-drawing cubes with exact
//!   ground truth, so every experiment is reproducible at desk scale.
//!
//! Channel indices in public documentation are 1-based ("channel 20"),
//! matching common hyperspectral tooling; all in-memory indices are 0-based.

pub mod chromatic;
pub mod cube;
pub mod dimred;
pub mod filter;
pub mod label;
pub mod learn;
pub mod morpho;
pub mod phantom;
pub mod preprocess;
pub mod seed;

use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header {path}: {reason}")]
    Header { path: PathBuf, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn header(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Header {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
