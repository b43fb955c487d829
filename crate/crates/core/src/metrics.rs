//! Accuracy, macro precision/recall/F1, PSNR, SSIM and best-round tracking.

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// Macro averages run over all `class_count` classes; empty denominators
/// count as zero.
pub fn classification_metrics(
    predictions: &[usize],
    labels: &[usize],
    class_count: usize,
) -> ClassificationMetrics {
    assert_eq!(
        predictions.len(),
        labels.len(),
        "predictions and labels differ in length"
    );
    let mut tp = vec![0usize; class_count];
    let mut predicted = vec![0usize; class_count];
    let mut actual = vec![0usize; class_count];
    let mut correct = 0usize;
    for (&p, &y) in predictions.iter().zip(labels) {
        if p < class_count {
            predicted[p] += 1;
        }
        if y < class_count {
            actual[y] += 1;
        }
        if p == y {
            correct += 1;
            if y < class_count {
                tp[y] += 1;
            }
        }
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let k = class_count.max(1) as f64;
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for c in 0..class_count {
        let precision = ratio(tp[c], predicted[c]);
        let recall = ratio(tp[c], actual[c]);
        p_sum += precision;
        r_sum += recall;
        if precision + recall > 0.0 {
            f_sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    ClassificationMetrics {
        accuracy: ratio(correct, labels.len()),
        macro_precision: p_sum / k,
        macro_recall: r_sum / k,
        macro_f1: f_sum / k,
    }
}

pub const PSNR_CAP_DB: f64 = 120.0;

/// `10 log10(max² / MSE)`, capped at 120 dB when the MSE is below 1e-12.
pub fn psnr<T: Real>(reconstruction: &[T], target: &[T], max_val: f64) -> f64 {
    assert_eq!(reconstruction.len(), target.len(), "image sizes differ");
    let mse = reconstruction
        .iter()
        .zip(target)
        .map(|(&a, &b)| {
            let d = (a - b).as_f64();
            d * d
        })
        .sum::<f64>()
        / reconstruction.len().max(1) as f64;
    psnr_from_mse(mse, max_val)
}

pub fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse < 1e-12 {
        PSNR_CAP_DB
    } else {
        10.0 * (max_val * max_val / mse).log10()
    }
}

const SSIM_WINDOW: usize = 8;

/// Mean SSIM over all 8×8 windows (stride 1) of two `rows × cols` images with
/// dynamic range 1. Images smaller than the window use one whole-image window.
pub fn ssim<T: Real>(a: &[T], b: &[T], rows: usize, cols: usize) -> f64 {
    assert_eq!(a.len(), rows * cols, "image a has wrong size");
    assert_eq!(b.len(), rows * cols, "image b has wrong size");
    let (wr, wc) = if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        (rows, cols)
    } else {
        (SSIM_WINDOW, SSIM_WINDOW)
    };
    let mut total = 0.0;
    let mut windows = 0usize;
    for r0 in 0..=rows - wr {
        for c0 in 0..=cols - wc {
            total += window_ssim(a, b, cols, r0, c0, wr, wc);
            windows += 1;
        }
    }
    total / windows.max(1) as f64
}

fn window_ssim<T: Real>(
    a: &[T],
    b: &[T],
    cols: usize,
    r0: usize,
    c0: usize,
    wr: usize,
    wc: usize,
) -> f64 {
    const C1: f64 = 0.01 * 0.01;
    const C2: f64 = 0.03 * 0.03;
    let n = (wr * wc) as f64;
    let pixels = || {
        (r0..r0 + wr).flat_map(move |r| {
            (c0..c0 + wc).map(move |c| (a[r * cols + c].as_f64(), b[r * cols + c].as_f64()))
        })
    };
    let (sa, sb) = pixels().fold((0.0, 0.0), |(sa, sb), (x, y)| (sa + x, sb + y));
    let (mu_a, mu_b) = (sa / n, sb / n);
    let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
    for (x, y) in pixels() {
        var_a += (x - mu_a) * (x - mu_a);
        var_b += (y - mu_b) * (y - mu_b);
        cov += (x - mu_a) * (y - mu_b);
    }
    let (var_a, var_b, cov) = (var_a / n, var_b / n, cov / n);
    ((2.0 * mu_a * mu_b + C1) * (2.0 * cov + C2))
        / ((mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRecord {
    pub round: usize,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Keeps the record with the highest accuracy; ties keep the earlier one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BestRoundTracker {
    best: Option<MetricRecord>,
}

impl BestRoundTracker {
    pub fn update(&mut self, record: MetricRecord) {
        match self.best {
            Some(best) if record.accuracy <= best.accuracy => {}
            _ => self.best = Some(record),
        }
    }

    pub fn best(&self) -> Option<&MetricRecord> {
        self.best.as_ref()
    }
}
