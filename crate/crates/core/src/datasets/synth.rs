//! Synthetic image classes: one Gaussian blob per class at a distinct
//! position on a ring, plus uniform pixel noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::matrix::Matrix;
use crate::scalar::Real;

use super::LabeledDataset;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub class_count: usize,
    pub per_class: usize,
    pub image_side: usize,
    /// Angular offset of the blobs in units of one class slot. Families with
    /// different phases have disjoint templates (0.5 interleaves them).
    pub phase: f64,
    pub noise_amplitude: f64,
    /// Blob standard deviation as a fraction of the image side.
    pub blob_width: f64,
    pub blob_peak: f64,
}

impl SynthParams {
    pub fn new(class_count: usize, per_class: usize, image_side: usize) -> Self {
        Self {
            class_count,
            per_class,
            image_side,
            phase: 0.0,
            noise_amplitude: 0.1,
            blob_width: 0.15,
            blob_peak: 0.9,
        }
    }

    pub fn template(&self, class: usize) -> Vec<f64> {
        let side = self.image_side as f64;
        let center = (side - 1.0) / 2.0;
        let radius = 0.3 * side;
        let angle = 2.0 * PI * (class as f64 + self.phase) / self.class_count as f64;
        let (cx, cy) = (center + radius * angle.cos(), center + radius * angle.sin());
        let sigma = (self.blob_width * side).max(1e-6);
        (0..self.image_side)
            .flat_map(|r| (0..self.image_side).map(move |c| (r as f64, c as f64)))
            .map(|(r, c)| {
                let d2 = (r - cy).powi(2) + (c - cx).powi(2);
                self.blob_peak * (-d2 / (2.0 * sigma * sigma)).exp()
            })
            .collect()
    }

    /// Class-grouped samples: `per_class` of class 0, then class 1, and so on.
    pub fn generate<T: Real>(&self, seed: u64) -> LabeledDataset<T> {
        assert!(self.class_count >= 2, "need at least two classes");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pixels = self.image_side * self.image_side;
        let n = self.class_count * self.per_class;
        let mut data = Vec::with_capacity(n * pixels);
        let mut labels = Vec::with_capacity(n);
        let amp = self.noise_amplitude;
        for class in 0..self.class_count {
            let template = self.template(class);
            for _ in 0..self.per_class {
                data.extend(template.iter().map(|&t| {
                    let noise = if amp > 0.0 {
                        rng.random_range(-amp..amp)
                    } else {
                        0.0
                    };
                    T::lit((t + noise).clamp(0.0, 1.0))
                }));
                labels.push(class);
            }
        }
        let images = Matrix::from_vec(n, pixels, data).expect("sized above");
        LabeledDataset::new(
            images,
            labels,
            self.class_count,
            self.image_side,
            self.image_side,
        )
        .expect("generator respects dataset invariants")
    }
}

/// `per_class` noisy samples of each of `class_count` blob templates on a
/// `image_side × image_side` grid.
pub fn synth_generate<T: Real>(
    class_count: usize,
    per_class: usize,
    image_side: usize,
    seed: u64,
) -> LabeledDataset<T> {
    SynthParams::new(class_count, per_class, image_side).generate(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_grouped() {
        let a: LabeledDataset<f64> = synth_generate(2, 5, 8, 11);
        let b: LabeledDataset<f64> = synth_generate(2, 5, 8, 11);
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert_eq!(a.labels, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
        let c: LabeledDataset<f64> = synth_generate(2, 5, 8, 12);
        assert_ne!(a.images, c.images);
    }

    #[test]
    fn pixels_stay_in_range_and_near_template() {
        let params = SynthParams::new(3, 20, 10);
        let ds: LabeledDataset<f64> = params.generate(1);
        assert!(ds
            .images
            .as_slice()
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v)));
        for (i, row) in ds.images.iter_rows().enumerate() {
            let template = params.template(ds.labels[i]);
            for (&p, &t) in row.iter().zip(&template) {
                assert!((p - t.clamp(0.0, 1.0)).abs() <= 0.1 + 1e-12);
            }
        }
    }

    #[test]
    fn interleaved_family_differs() {
        let base = SynthParams::new(4, 1, 12);
        let shifted = SynthParams { phase: 0.5, ..base };
        for c in 0..4 {
            for d in 0..4 {
                assert_ne!(base.template(c), shifted.template(d));
            }
        }
    }
}
