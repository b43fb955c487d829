//! Unsupervised outlier detectors fitted on the server from client loss
//! points or embeddings.

mod iforest;
mod ocsvm;

pub use iforest::{average_path_length, IforestModel, IforestParams};
pub use ocsvm::{OcsvmModel, OcsvmParams};

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Real;

/// Per-coordinate z-scoring fitted on the detector's training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer<T> {
    mean: Vec<T>,
    scale: Vec<T>,
}

impl<T: Real> Standardizer<T> {
    pub fn fit(points: &Matrix<T>) -> Self {
        let n = T::from_count(points.rows().max(1));
        let mean: Vec<T> = points.column_sums().into_iter().map(|s| s / n).collect();
        let mut var = vec![T::zero(); points.cols()];
        for row in points.iter_rows() {
            for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > T::zero() && sd.is_finite() {
                    sd
                } else {
                    T::one()
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform_row(&self, row: &[T]) -> Vec<T> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((&x, &m), &s)| (x - m) / s)
            .collect()
    }

    pub fn transform(&self, points: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_dim(points.cols())?;
        let data = points
            .iter_rows()
            .flat_map(|r| self.transform_row(r))
            .collect();
        Matrix::from_vec(points.rows(), points.cols(), data)
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != self.dim() {
            return Err(Error::Dimension {
                context: "detector input",
                expected: self.dim(),
                found: dim,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    Ocsvm,
    Iforest,
}

/// A fitted detector.
#[derive(Debug, Clone, PartialEq)]
pub enum OutlierModel<T> {
    Ocsvm(OcsvmModel<T>),
    Iforest(IforestModel<T>),
}

/// Scores and verdicts for a batch of points.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlierVerdict<T> {
    /// OCSVM decision values (negative ⇒ outlier) or IF anomaly scores.
    pub scores: Vec<T>,
    pub is_outlier: Vec<bool>,
}

impl<T> OutlierVerdict<T> {
    pub fn outlier_count(&self) -> usize {
        self.is_outlier.iter().filter(|&&o| o).count()
    }
}

impl<T: Real> OutlierModel<T> {
    /// Fits a detector with contamination `contamination`. For the OCSVM the
    /// contamination is used as `ν`.
    pub fn fit<R: Rng + ?Sized>(
        kind: DetectorKind,
        points: &Matrix<T>,
        contamination: f64,
        rng: &mut R,
    ) -> Result<Self> {
        match kind {
            DetectorKind::Ocsvm => {
                OcsvmModel::fit(points, &OcsvmParams::with_nu(contamination)).map(Self::Ocsvm)
            }
            DetectorKind::Iforest => {
                IforestModel::fit(points, &IforestParams::default(), rng).map(Self::Iforest)
            }
        }
    }

    pub fn kind(&self) -> DetectorKind {
        match self {
            Self::Ocsvm(_) => DetectorKind::Ocsvm,
            Self::Iforest(_) => DetectorKind::Iforest,
        }
    }

    /// OCSVM: outlier iff decision < 0. IF: outlier iff the score reaches the
    /// `contamination` upper quantile of the training scores.
    pub fn predict_outliers(
        &self,
        points: &Matrix<T>,
        contamination: f64,
    ) -> Result<OutlierVerdict<T>> {
        match self {
            Self::Ocsvm(model) => {
                let scores = model.decision_batch(points)?;
                let is_outlier = scores.iter().map(|&s| s < T::zero()).collect();
                Ok(OutlierVerdict { scores, is_outlier })
            }
            Self::Iforest(model) => {
                let scores = model.score_batch(points)?;
                let threshold = model.threshold(contamination);
                let is_outlier = scores.iter().map(|&s| s >= threshold).collect();
                Ok(OutlierVerdict { scores, is_outlier })
            }
        }
    }
}
