//! Deterministic federated-learning simulator with per-round sample selection.
//!
//! Clients train a multi-task autoencoder (shared encoder, reconstruction
//! decoder, classifier head) under FedAvg on noisy, non-IID shards. From a
//! warm-up round onward each client drops samples judged noisy by one of:
//!
//! - an adaptive loss threshold steered by round-level utility,
//! - a One-Class SVM fitted on the server,
//! - an Isolation Forest fitted on the server,
//!
//! working either in the 2D space of weighted (classification, reconstruction)
//! losses or in the embedding space, where an optional federated multi-class
//! SVDD regularizer tightens per-class clusters.
//!
//! All numeric code is generic over [`Real`] (`f32` or `f64`); the aliases at
//! the bottom of this file fix the scalar to `f64`, which every published
//! tolerance assumes.

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b, tol): (f64, f64, f64) = ($a, $b, $tol);
        assert!((a - b).abs() <= tol, "{} vs {} (tol {})", a, b, tol);
    }};
}

pub mod adaptive_threshold;
pub mod datasets;
pub mod error;
pub mod federation;
pub mod matrix;
pub mod metrics;
pub mod mtae;
pub mod nn;
pub mod outlier;
pub mod rng;
pub mod scalar;
pub mod svdd;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use scalar::Real;

pub type Matrix64 = Matrix<f64>;
pub type ParamSet64 = nn::ParamSet<f64>;
pub type MtaeParams64 = mtae::MtaeParams<f64>;
pub type Dataset64 = datasets::LabeledDataset<f64>;
pub type OutlierModel64 = outlier::OutlierModel<f64>;
pub type AtState64 = adaptive_threshold::AtState<f64>;
pub type SvddState64 = svdd::SvddState<f64>;
pub type Simulation64 = federation::Simulation<f64>;
