//! Federated multi-class SVDD protocol.
//!
//! The server derives per-class centroids from a public test set once the
//! activation round is reached. After local training, clients report the L2
//! distance of each local embedding to its own class centroid, and the server
//! sets each radius to the nearest-rank `q = 1 − ν` quantile of the merged
//! distances for that class.

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct SvddState<T> {
    pub active: bool,
    pub centroids: Vec<Vec<T>>,
    /// L2 radii, one per class.
    pub radii: Vec<T>,
    /// Outlier fraction; the radius quantile is `1 − nu`.
    pub nu: f64,
    pub activation_round: usize,
    /// Recompute centroids on every call after activation.
    pub recenter: bool,
}

impl<T: Real> SvddState<T> {
    pub fn new(nu: f64, activation_round: usize) -> Self {
        Self {
            active: false,
            centroids: Vec::new(),
            radii: Vec::new(),
            nu,
            activation_round,
            recenter: false,
        }
    }

    /// Whether [`maybe_activate`](Self::maybe_activate) would do any work at `round`.
    pub fn needs_server_embeddings(&self, round: usize) -> bool {
        round >= self.activation_round && (!self.active || self.recenter)
    }

    /// Activates the regularizer at the first round `>= activation_round`,
    /// using the server's test-set embeddings. Returns whether anything changed.
    pub fn maybe_activate(
        &mut self,
        round: usize,
        embeddings: &Matrix<T>,
        labels: &[usize],
        class_count: usize,
    ) -> Result<bool> {
        if !self.needs_server_embeddings(round) {
            return Ok(false);
        }
        let centroids = compute_centroids(embeddings, labels, class_count)?;
        if !self.active {
            let report = client_distances(embeddings, labels, &centroids)?;
            let previous = vec![T::zero(); class_count];
            self.radii = update_radii(&report, self.nu, &previous);
        }
        self.centroids = centroids;
        self.active = true;
        Ok(true)
    }
}

/// Per-class mean embedding.
pub fn compute_centroids<T: Real>(
    embeddings: &Matrix<T>,
    labels: &[usize],
    class_count: usize,
) -> Result<Vec<Vec<T>>> {
    if labels.len() != embeddings.rows() {
        return Err(Error::Dimension {
            context: "centroid labels",
            expected: embeddings.rows(),
            found: labels.len(),
        });
    }
    let mut sums = vec![vec![T::zero(); embeddings.cols()]; class_count];
    let mut counts = vec![0usize; class_count];
    for (row, &y) in embeddings.iter_rows().zip(labels) {
        if y >= class_count {
            return Err(Error::LabelOutOfRange {
                label: y,
                class_count,
            });
        }
        counts[y] += 1;
        for (s, &v) in sums[y].iter_mut().zip(row) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .map(|(class, (sum, count))| {
            if count == 0 {
                return Err(Error::Protocol(format!(
                    "class {class} has no samples for its centroid"
                )));
            }
            let n = T::from_count(count);
            Ok(sum.into_iter().map(|s| s / n).collect())
        })
        .collect()
}

/// Distances grouped by class, as sent from a client to the server.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceReport<T> {
    pub per_class: Vec<Vec<T>>,
}

impl<T: Real> DistanceReport<T> {
    pub fn empty(class_count: usize) -> Self {
        Self {
            per_class: vec![Vec::new(); class_count],
        }
    }

    pub fn merge(&mut self, other: &DistanceReport<T>) {
        if self.per_class.len() < other.per_class.len() {
            self.per_class.resize(other.per_class.len(), Vec::new());
        }
        for (mine, theirs) in self.per_class.iter_mut().zip(&other.per_class) {
            mine.extend_from_slice(theirs);
        }
    }

    pub fn total(&self) -> usize {
        self.per_class.iter().map(Vec::len).sum()
    }
}

/// L2 distance of every embedding to its own class centroid.
pub fn client_distances<T: Real>(
    embeddings: &Matrix<T>,
    labels: &[usize],
    centroids: &[Vec<T>],
) -> Result<DistanceReport<T>> {
    let mut report = DistanceReport::empty(centroids.len());
    for (row, &y) in embeddings.iter_rows().zip(labels) {
        let centroid = centroids.get(y).ok_or(Error::LabelOutOfRange {
            label: y,
            class_count: centroids.len(),
        })?;
        report.per_class[y].push(squared_distance(row, centroid).sqrt());
    }
    Ok(report)
}

/// Nearest-rank quantile at `q = 1 − nu`: the element at 1-based position
/// `ceil(q · n)` of the sorted distances. Classes without reports keep their
/// previous radius.
pub fn update_radii<T: Real>(report: &DistanceReport<T>, nu: f64, previous: &[T]) -> Vec<T> {
    let q = 1.0 - nu;
    previous
        .iter()
        .enumerate()
        .map(|(class, &old)| {
            let Some(distances) = report.per_class.get(class).filter(|d| !d.is_empty()) else {
                return old;
            };
            let mut sorted = distances.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
            let n = sorted.len();
            // The epsilon absorbs representation error in q·n (e.g. 0.6·10).
            let rank = ((q * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
            sorted[rank - 1]
        })
        .collect()
}
