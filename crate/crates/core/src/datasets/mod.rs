//! Labeled image datasets, noise injection and non-IID client partitioning.

mod idx;
mod noise;
mod partition;
mod synth;

pub use idx::{
    encode_idx_images, encode_idx_labels, load_idx, parse_idx, IMAGE_MAGIC, LABEL_MAGIC,
};
pub use noise::{inject_closed_set, inject_open_set, NoiseKind, NoiseSpec};
pub use partition::{partition_noniid, ClientShard, PartitionScheme};
pub use synth::{synth_generate, SynthParams};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Real;

/// Images in `[0, 1]` (one row per image), labels, and ground-truth noise
/// bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    pub images: Matrix<T>,
    pub labels: Vec<usize>,
    /// True where noise was injected.
    pub noise_flag: Vec<bool>,
    /// Label before any injection.
    pub origin_label: Vec<usize>,
    pub class_count: usize,
    pub image_rows: usize,
    pub image_cols: usize,
}

impl<T: Real> LabeledDataset<T> {
    pub fn new(
        images: Matrix<T>,
        labels: Vec<usize>,
        class_count: usize,
        image_rows: usize,
        image_cols: usize,
    ) -> Result<Self> {
        if images.rows() != labels.len() {
            return Err(Error::CountMismatch {
                images: images.rows(),
                labels: labels.len(),
            });
        }
        if image_rows * image_cols != images.cols() {
            return Err(Error::Dimension {
                context: "image size",
                expected: image_rows * image_cols,
                found: images.cols(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::LabelOutOfRange { label, class_count });
        }
        if images
            .as_slice()
            .iter()
            .any(|&v| !(v >= T::zero() && v <= T::one()))
        {
            return Err(Error::Config("pixel values must lie in [0, 1]".into()));
        }
        let n = labels.len();
        Ok(Self {
            images,
            noise_flag: vec![false; n],
            origin_label: labels.clone(),
            labels,
            class_count,
            image_rows,
            image_cols,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.images.cols()
    }

    pub fn noise_count(&self) -> usize {
        self.noise_flag.iter().filter(|&&f| f).count()
    }

    /// Subset in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            noise_flag: indices.iter().map(|&i| self.noise_flag[i]).collect(),
            origin_label: indices.iter().map(|&i| self.origin_label[i]).collect(),
            class_count: self.class_count,
            image_rows: self.image_rows,
            image_cols: self.image_cols,
        }
    }

    /// Indices of each class, ascending.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.class_count];
        for (i, &y) in self.labels.iter().enumerate() {
            out[y].push(i);
        }
        out
    }
}

/// `floor(x + 0.5)` for nonnegative quotas.
pub(crate) fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}
