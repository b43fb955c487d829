use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};
use crate::scalar::Real;

use super::Standardizer;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcsvmParams {
    pub nu: f64,
    /// RBF width. `None` selects `1 / (d · var)` on the standardized data.
    pub gamma: Option<f64>,
    pub tol: f64,
    /// Pair-update cap; `None` means `200 · n`.
    pub max_iter: Option<usize>,
}

impl OcsvmParams {
    pub fn with_nu(nu: f64) -> Self {
        Self {
            nu,
            gamma: None,
            tol: 1e-4,
            max_iter: None,
        }
    }
}

/// ν-parameterized One-Class SVM with an RBF kernel.
///
/// The dual `min ½ αᵀKα` subject to `0 ≤ αᵢ ≤ 1/(νn)` and `Σαᵢ = 1` is
/// solved by SMO on maximal-violating pairs with second-order working-set
/// selection.
#[derive(Debug, Clone, PartialEq)]
pub struct OcsvmModel<T> {
    standardizer: Standardizer<T>,
    support_vectors: Matrix<T>,
    dual_coef: Vec<T>,
    offset: T,
    gamma: T,
    nu: f64,
    upper_bound: T,
    iterations: usize,
}

impl<T: Real> OcsvmModel<T> {
    pub fn fit(points: &Matrix<T>, params: &OcsvmParams) -> Result<Self> {
        let n = points.rows();
        if n < 2 {
            return Err(Error::Fit(format!(
                "one-class SVM needs at least 2 points, got {n}"
            )));
        }
        if !(params.nu > 0.0 && params.nu <= 1.0) {
            return Err(Error::Fit(format!(
                "nu must lie in (0, 1], got {}",
                params.nu
            )));
        }
        if !points.all_finite() {
            return Err(Error::Fit("non-finite input point".into()));
        }
        let standardizer = Standardizer::fit(points);
        let x = standardizer.transform(points)?;
        let d = x.cols().max(1);

        let gamma = match params.gamma {
            Some(g) => T::lit(g),
            None => {
                let n_t = T::from_count(n);
                let mean_var = x
                    .column_sums()
                    .iter()
                    .enumerate()
                    .map(|(j, &s)| {
                        let m = s / n_t;
                        x.iter_rows().map(|r| (r[j] - m) * (r[j] - m)).sum::<T>() / n_t
                    })
                    .sum::<T>()
                    / T::from_count(d);
                let var = if mean_var > T::zero() {
                    mean_var
                } else {
                    T::one()
                };
                T::one() / (T::from_count(d) * var)
            }
        };

        let kernel = kernel_matrix(&x, gamma);
        let upper = T::one() / (T::lit(params.nu) * T::from_count(n));

        // Fill the first ⌊νn⌋ coefficients to the bound and put the remainder
        // of the unit mass on the next one.
        let mut alpha = vec![T::zero(); n];
        let full = ((params.nu * n as f64) + 1e-9).floor() as usize;
        let mut remaining = T::one();
        for a in alpha.iter_mut().take(full.min(n)) {
            *a = upper.min(remaining);
            remaining -= *a;
        }
        if full < n && remaining > T::zero() {
            alpha[full] = remaining;
        }

        let mut grad = vec![T::zero(); n];
        for (i, g) in grad.iter_mut().enumerate() {
            let row = &kernel[i * n..(i + 1) * n];
            *g = row.iter().zip(&alpha).map(|(&k, &a)| k * a).sum();
        }

        let tol = T::lit(params.tol);
        let tau = T::lit(1e-12);
        let cap = params.max_iter.unwrap_or(200 * n);
        let mut iterations = 0;
        loop {
            // i: may increase (α < C) with the smallest gradient.
            let mut i = usize::MAX;
            let mut g_min = T::infinity();
            let mut g_max = T::neg_infinity();
            for t in 0..n {
                if alpha[t] < upper && grad[t] < g_min {
                    g_min = grad[t];
                    i = t;
                }
                if alpha[t] > T::zero() && grad[t] > g_max {
                    g_max = grad[t];
                }
            }
            let violation = g_max - g_min;
            if i == usize::MAX || violation < tol {
                break;
            }
            if iterations >= cap {
                return Err(Error::Convergence {
                    violation: violation.as_f64(),
                    iterations,
                });
            }

            // j: may decrease (α > 0), chosen by largest second-order gain.
            let k_i = &kernel[i * n..(i + 1) * n];
            let mut j = usize::MAX;
            let mut best_gain = T::neg_infinity();
            for t in 0..n {
                if alpha[t] > T::zero() && grad[t] > g_min {
                    let b = grad[t] - g_min;
                    let mut a = k_i[i] + kernel[t * n + t] - T::lit(2.0) * k_i[t];
                    if a <= T::zero() {
                        a = tau;
                    }
                    let gain = b * b / a;
                    if gain > best_gain {
                        best_gain = gain;
                        j = t;
                    }
                }
            }
            if j == usize::MAX {
                break;
            }

            let mut curvature = k_i[i] + kernel[j * n + j] - T::lit(2.0) * k_i[j];
            if curvature <= T::zero() {
                curvature = tau;
            }
            let step = (grad[j] - grad[i]) / curvature;
            let room_i = upper - alpha[i];
            let room_j = alpha[j];
            let delta = step.min(room_i).min(room_j);
            if delta == room_i {
                alpha[i] = upper;
            } else {
                alpha[i] += delta;
            }
            if delta == room_j {
                alpha[j] = T::zero();
            } else {
                alpha[j] -= delta;
            }
            let k_j = &kernel[j * n..(j + 1) * n];
            for t in 0..n {
                grad[t] += delta * (k_i[t] - k_j[t]);
            }
            iterations += 1;
        }

        let offset = offset_from_kkt(&alpha, &grad, upper);

        let sv: Vec<usize> = (0..n).filter(|&t| alpha[t] > T::zero()).collect();
        Ok(Self {
            standardizer,
            support_vectors: x.select_rows(&sv),
            dual_coef: sv.iter().map(|&t| alpha[t]).collect(),
            offset,
            gamma,
            nu: params.nu,
            upper_bound: upper,
            iterations,
        })
    }

    /// `Σ αᵢ K(svᵢ, x) − ρ`; negative for outliers.
    pub fn decision(&self, point: &[T]) -> Result<T> {
        self.standardizer.check_dim(point.len())?;
        let x = self.standardizer.transform_row(point);
        Ok(self.decision_standardized(&x))
    }

    fn decision_standardized(&self, x: &[T]) -> T {
        self.support_vectors
            .iter_rows()
            .zip(&self.dual_coef)
            .map(|(sv, &a)| a * (-self.gamma * squared_distance(sv, x)).exp())
            .sum::<T>()
            - self.offset
    }

    pub fn decision_batch(&self, points: &Matrix<T>) -> Result<Vec<T>> {
        self.standardizer.check_dim(points.cols())?;
        Ok(points
            .iter_rows()
            .map(|r| self.decision_standardized(&self.standardizer.transform_row(r)))
            .collect())
    }

    /// Support vectors in standardized coordinates.
    pub fn support_vectors(&self) -> &Matrix<T> {
        &self.support_vectors
    }

    /// Support vectors mapped back to input coordinates.
    pub fn support_vectors_original(&self) -> Matrix<T> {
        let s = &self.standardizer;
        let data = self
            .support_vectors
            .iter_rows()
            .flat_map(|r| {
                r.iter()
                    .zip(&s.mean)
                    .zip(&s.scale)
                    .map(|((&v, &m), &sc)| v * sc + m)
                    .collect::<Vec<_>>()
            })
            .collect();
        Matrix::from_vec(
            self.support_vectors.rows(),
            self.support_vectors.cols(),
            data,
        )
        .expect("same shape")
    }

    pub fn dual_coef(&self) -> &[T] {
        &self.dual_coef
    }

    pub fn offset(&self) -> T {
        self.offset
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn upper_bound(&self) -> T {
        self.upper_bound
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

fn kernel_matrix<T: Real>(x: &Matrix<T>, gamma: T) -> Vec<T> {
    let n = x.rows();
    let mut k = vec![T::zero(); n * n];
    for i in 0..n {
        k[i * n + i] = T::one();
        for j in i + 1..n {
            let v = (-gamma * squared_distance(x.row(i), x.row(j))).exp();
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// ρ from the KKT conditions: the mean gradient over free coefficients, or
/// the midpoint of the feasible interval when none is free.
fn offset_from_kkt<T: Real>(alpha: &[T], grad: &[T], upper: T) -> T {
    let mut free_sum = T::zero();
    let mut free_count = 0usize;
    let mut lower = T::neg_infinity();
    let mut upper_g = T::infinity();
    for (&a, &g) in alpha.iter().zip(grad) {
        if a > T::zero() && a < upper {
            free_sum += g;
            free_count += 1;
        } else if a >= upper {
            lower = lower.max(g);
        } else {
            upper_g = upper_g.min(g);
        }
    }
    if free_count > 0 {
        free_sum / T::from_count(free_count)
    } else if lower.is_finite() && upper_g.is_finite() {
        (lower + upper_g) / T::lit(2.0)
    } else if lower.is_finite() {
        lower
    } else {
        upper_g
    }
}
