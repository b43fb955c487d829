use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::{round_half_up, LabeledDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    ClosedSet,
    OpenSet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!(
            "noise rate must lie in [0, 1], got {rate}"
        )));
    }
    Ok(())
}

/// Relabels exactly `round(rate · n)` samples, chosen without replacement,
/// to a uniformly drawn different class. Images are untouched.
pub fn inject_closed_set<T: Real>(
    dataset: &LabeledDataset<T>,
    rate: f64,
    seed: u64,
) -> Result<LabeledDataset<T>> {
    check_rate(rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = dataset.clone();
    let quota = round_half_up(rate * dataset.len() as f64).min(dataset.len());
    let k = dataset.class_count;
    let mut chosen = index::sample(&mut rng, dataset.len(), quota).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        let current = out.labels[i];
        // uniform over the k − 1 other classes
        let draw = rng.random_range(0..k - 1);
        out.labels[i] = if draw >= current { draw + 1 } else { draw };
        out.noise_flag[i] = true;
    }
    Ok(out)
}

/// Replaces the image of `round(rate · n_c)` samples of every class `c` with
/// an image from `source`, keeping the label. Source images are drawn
/// without replacement until exhausted, then with replacement.
pub fn inject_open_set<T: Real>(
    dataset: &LabeledDataset<T>,
    source: &LabeledDataset<T>,
    rate: f64,
    seed: u64,
) -> Result<LabeledDataset<T>> {
    check_rate(rate)?;
    if source.is_empty() {
        return Err(Error::Config("open-set source dataset is empty".into()));
    }
    if source.input_dim() != dataset.input_dim() {
        return Err(Error::Dimension {
            context: "open-set source image size",
            expected: dataset.input_dim(),
            found: source.input_dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = dataset.clone();
    let mut pool: Vec<usize> = (0..source.len()).collect();
    pool.shuffle(&mut rng);
    let mut next_source = pool.into_iter();

    for members in dataset.class_indices() {
        let quota = round_half_up(rate * members.len() as f64).min(members.len());
        let mut chosen: Vec<usize> = index::sample(&mut rng, members.len(), quota)
            .into_iter()
            .map(|j| members[j])
            .collect();
        chosen.sort_unstable();
        for i in chosen {
            let s = next_source
                .next()
                .unwrap_or_else(|| rng.random_range(0..source.len()));
            out.images.row_mut(i).copy_from_slice(source.images.row(s));
            out.noise_flag[i] = true;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{synth_generate, SynthParams};
    use proptest::prelude::*;

    #[test]
    fn closed_set_zero_rate_is_identity() {
        let ds: LabeledDataset<f64> = synth_generate(3, 10, 6, 0);
        assert_eq!(inject_closed_set(&ds, 0.0, 1).unwrap(), ds);
    }

    #[test]
    fn closed_set_full_rate_changes_every_label() {
        let ds: LabeledDataset<f64> = synth_generate(3, 10, 6, 0);
        let noisy = inject_closed_set(&ds, 1.0, 1).unwrap();
        assert!(noisy
            .labels
            .iter()
            .zip(&noisy.origin_label)
            .all(|(a, b)| a != b));
        assert_eq!(noisy.images, ds.images);
    }

    #[test]
    fn closed_set_exact_quota() {
        let ds: LabeledDataset<f64> = synth_generate(4, 250, 4, 0);
        let noisy = inject_closed_set(&ds, 0.4, 9).unwrap();
        assert_eq!(noisy.noise_count(), 400);
        assert!(inject_closed_set(&ds, 1.5, 9).is_err());
    }

    #[test]
    fn open_set_per_class_quota() {
        let ds: LabeledDataset<f64> = synth_generate(4, 25, 6, 0);
        let source: LabeledDataset<f64> = SynthParams {
            phase: 0.5,
            ..SynthParams::new(4, 5, 6)
        }
        .generate(3);
        assert_eq!(inject_open_set(&ds, &source, 0.0, 1).unwrap(), ds);

        let noisy = inject_open_set(&ds, &source, 0.4, 1).unwrap();
        for members in noisy.class_indices() {
            assert_eq!(members.iter().filter(|&&i| noisy.noise_flag[i]).count(), 10);
        }
        for i in 0..noisy.len() {
            assert_eq!(noisy.labels[i], noisy.origin_label[i]);
            if noisy.noise_flag[i] {
                assert!(source.images.iter_rows().any(|r| r == noisy.images.row(i)));
            } else {
                assert_eq!(noisy.images.row(i), ds.images.row(i));
            }
        }
    }

    proptest! {
        #[test]
        fn injection_preserves_size_and_range(rate in 0.0f64..=1.0, seed in any::<u64>()) {
            let ds: LabeledDataset<f64> = synth_generate(3, 7, 4, 5);
            let source: LabeledDataset<f64> = SynthParams { phase: 0.5, ..SynthParams::new(3, 2, 4) }.generate(6);
            let closed = inject_closed_set(&ds, rate, seed).unwrap();
            prop_assert_eq!(closed.len(), ds.len());
            prop_assert_eq!(closed.noise_count(), round_half_up(rate * 21.0));
            let open = inject_open_set(&ds, &source, rate, seed).unwrap();
            prop_assert_eq!(open.len(), ds.len());
            prop_assert_eq!(open.noise_count(), 3 * round_half_up(rate * 7.0));
            prop_assert!(open.images.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
