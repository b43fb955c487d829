//! Multi-task autoencoder: encoder `f: x → z`, decoder `g: z → x̂` and
//! classifier `h: z → ŷ`, trained on a weighted sum of reconstruction MSE and
//! classification cross-entropy, optionally regularized by the multi-class
//! SVDD hinge on the embedding space.

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};
use crate::nn::{ce_loss, mean_of, mse_loss, sgd_step, LayerSpec, Network, ParamSet, SgdConfig};
use crate::scalar::Real;
use crate::svdd::SvddState;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MtaeSpec {
    pub input_dim: usize,
    pub embed_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    pub class_count: usize,
}

impl MtaeSpec {
    /// Encoder `input→128→32`, linear classifier, decoder `32→128→input`.
    pub fn desk_scale(input_dim: usize, class_count: usize) -> Self {
        Self {
            input_dim,
            embed_dim: 32,
            encoder_hidden: vec![128],
            decoder_hidden: vec![128],
            classifier_hidden: Vec::new(),
            class_count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        if self.embed_dim < 2 {
            return Err(Error::Config(format!(
                "embed_dim must be at least 2, got {}",
                self.embed_dim
            )));
        }
        if self.class_count < 2 {
            return Err(Error::Config(format!(
                "class_count must be at least 2, got {}",
                self.class_count
            )));
        }
        let hidden = self
            .encoder_hidden
            .iter()
            .chain(&self.decoder_hidden)
            .chain(&self.classifier_hidden);
        if hidden.into_iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Dense stack `input → hidden… → output` with ReLU between layers and an
/// optional final activation.
fn dense_stack(
    input: usize,
    hidden: &[usize],
    output: usize,
    last: Option<LayerSpec>,
) -> Result<Network> {
    let mut layers = Vec::new();
    let mut width = input;
    for &h in hidden {
        layers.push(LayerSpec::Dense {
            in_dim: width,
            out_dim: h,
        });
        layers.push(LayerSpec::Relu);
        width = h;
    }
    layers.push(LayerSpec::Dense {
        in_dim: width,
        out_dim: output,
    });
    layers.extend(last);
    Network::new(layers)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub rec: f64,
    pub cls: f64,
    pub reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rec: 1.0,
            cls: 0.05,
            reg: 1e-5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rec", self.rec), ("cls", self.cls), ("reg", self.reg)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "loss weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-sample reconstruction and classification losses.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleLosses<T> {
    pub rec: Vec<T>,
    pub cls: Vec<T>,
    /// `(λ_cls · cls, λ_rec · rec)` per sample.
    pub loss_points: Vec<[T; 2]>,
    /// Sum of each loss point's two coordinates.
    pub weighted_sum: Vec<T>,
}

impl<T: Real> SampleLosses<T> {
    pub fn new(rec: Vec<T>, cls: Vec<T>, weights: &LossWeights) -> Self {
        let (wr, wc) = (T::lit(weights.rec), T::lit(weights.cls));
        let loss_points: Vec<[T; 2]> = rec
            .iter()
            .zip(&cls)
            .map(|(&r, &c)| [wc * c, wr * r])
            .collect();
        let weighted_sum = loss_points.iter().map(|p| p[0] + p[1]).collect();
        Self {
            rec,
            cls,
            loss_points,
            weighted_sum,
        }
    }

    pub fn len(&self) -> usize {
        self.rec.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rec.is_empty()
    }

    /// Loss points as an `n × 2` matrix.
    pub fn loss_point_matrix(&self) -> Matrix<T> {
        let data = self
            .loss_points
            .iter()
            .flat_map(|p| p.iter().copied())
            .collect();
        Matrix::from_vec(self.len(), 2, data).expect("two coordinates per point")
    }
}

/// `λ_rec · mean(rec) + λ_cls · mean(cls)`.
pub fn combined_loss<T: Real>(losses: &SampleLosses<T>, weights: &LossWeights) -> T {
    T::lit(weights.rec) * mean_of(&losses.rec) + T::lit(weights.cls) * mean_of(&losses.cls)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MtaeParams<T> {
    pub encoder: ParamSet<T>,
    pub decoder: ParamSet<T>,
    pub classifier: ParamSet<T>,
}

impl<T: Real> MtaeParams<T> {
    fn parts(&self) -> [&ParamSet<T>; 3] {
        [&self.encoder, &self.decoder, &self.classifier]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            decoder: self.decoder.zeros_like(),
            classifier: self.classifier.zeros_like(),
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.parts()
            .iter()
            .zip(other.parts())
            .all(|(a, b)| a.same_shape(b))
    }

    pub fn scalar_count(&self) -> usize {
        self.parts().iter().map(|p| p.scalar_count()).sum()
    }

    /// Every scalar in encoder, decoder, classifier order.
    pub fn values(&self) -> impl Iterator<Item = T> + '_ {
        self.encoder
            .values()
            .chain(self.decoder.values())
            .chain(self.classifier.values())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut T> + '_ {
        self.encoder
            .values_mut()
            .chain(self.decoder.values_mut())
            .chain(self.classifier.values_mut())
    }

    pub fn add_scaled(&mut self, other: &Self, factor: T) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Protocol("model parameter shapes differ".into()));
        }
        self.encoder.add_scaled(&other.encoder, factor)?;
        self.decoder.add_scaled(&other.decoder, factor)?;
        self.classifier.add_scaled(&other.classifier, factor)
    }

    pub fn sgd_step(&mut self, grads: &Self, cfg: &SgdConfig) -> Result<()> {
        sgd_step(&mut self.encoder, &grads.encoder, cfg)?;
        sgd_step(&mut self.decoder, &grads.decoder, cfg)?;
        sgd_step(&mut self.classifier, &grads.classifier, cfg)
    }

    /// Largest absolute per-parameter difference.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.values()
            .zip(other.values())
            .fold(T::zero(), |acc, (a, b)| acc.max((a - b).abs()))
    }
}

#[derive(Debug, Clone)]
pub struct MtaeOutput<T> {
    pub reconstruction: Matrix<T>,
    pub logits: Matrix<T>,
    pub embedding: Matrix<T>,
    pub losses: SampleLosses<T>,
}

/// Outputs without labels, for evaluation.
#[derive(Debug, Clone)]
pub struct Inference<T> {
    pub reconstruction: Matrix<T>,
    pub logits: Matrix<T>,
    pub embedding: Matrix<T>,
}

impl<T: Real> Inference<T> {
    pub fn predictions(&self) -> Vec<usize> {
        self.logits
            .iter_rows()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, T::neg_infinity()), |best, (c, &v)| {
                        if v > best.1 {
                            (c, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect()
    }
}

/// Value and parameter gradient of the full training objective on one batch.
#[derive(Debug, Clone)]
pub struct LossGradient<T> {
    pub loss: T,
    pub regularizer: Option<T>,
    pub grads: MtaeParams<T>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mtae {
    spec: MtaeSpec,
    encoder: Network,
    decoder: Network,
    classifier: Network,
}

impl Mtae {
    pub fn new(spec: MtaeSpec) -> Result<Self> {
        spec.validate()?;
        let encoder = dense_stack(spec.input_dim, &spec.encoder_hidden, spec.embed_dim, None)?;
        let decoder = dense_stack(
            spec.embed_dim,
            &spec.decoder_hidden,
            spec.input_dim,
            Some(LayerSpec::Sigmoid),
        )?;
        let classifier = dense_stack(
            spec.embed_dim,
            &spec.classifier_hidden,
            spec.class_count,
            None,
        )?;
        Ok(Self {
            spec,
            encoder,
            decoder,
            classifier,
        })
    }

    pub fn spec(&self) -> &MtaeSpec {
        &self.spec
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> MtaeParams<T> {
        MtaeParams {
            encoder: self.encoder.init(rng),
            decoder: self.decoder.init(rng),
            classifier: self.classifier.init(rng),
        }
    }

    pub fn embed<T: Real>(&self, params: &MtaeParams<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(self.encoder.forward(&params.encoder, x)?.into_output())
    }

    pub fn infer<T: Real>(&self, params: &MtaeParams<T>, x: &Matrix<T>) -> Result<Inference<T>> {
        let embedding = self.embed(params, x)?;
        let reconstruction = self
            .decoder
            .forward(&params.decoder, &embedding)?
            .into_output();
        let logits = self
            .classifier
            .forward(&params.classifier, &embedding)?
            .into_output();
        Ok(Inference {
            reconstruction,
            logits,
            embedding,
        })
    }

    pub fn forward<T: Real>(
        &self,
        params: &MtaeParams<T>,
        x: &Matrix<T>,
        labels: &[usize],
        weights: &LossWeights,
    ) -> Result<MtaeOutput<T>> {
        let Inference {
            reconstruction,
            logits,
            embedding,
        } = self.infer(params, x)?;
        let rec = mse_loss(&reconstruction, x)?;
        let cls = ce_loss(&logits, labels)?;
        Ok(MtaeOutput {
            reconstruction,
            logits,
            embedding,
            losses: SampleLosses::new(rec.per_sample, cls.per_sample, weights),
        })
    }

    /// Training objective `λ_rec·MSE + λ_cls·CE (+ λ_reg·L_reg)` and its
    /// gradient. The regularizer is included only when `svdd` is active.
    pub fn loss_and_grad<T: Real>(
        &self,
        params: &MtaeParams<T>,
        x: &Matrix<T>,
        labels: &[usize],
        weights: &LossWeights,
        svdd: Option<&SvddState<T>>,
    ) -> Result<LossGradient<T>> {
        let enc_trace = self.encoder.forward(&params.encoder, x)?;
        let z = enc_trace.output();
        let dec_trace = self.decoder.forward(&params.decoder, z)?;
        let cls_trace = self.classifier.forward(&params.classifier, z)?;

        let rec = mse_loss(dec_trace.output(), x)?;
        let cls = ce_loss(cls_trace.output(), labels)?;
        let (w_rec, w_cls, w_reg) = (
            T::lit(weights.rec),
            T::lit(weights.cls),
            T::lit(weights.reg),
        );

        let mut rec_up = rec.grad;
        rec_up.scale(w_rec);
        let mut cls_up = cls.grad;
        cls_up.scale(w_cls);
        let dec_grads = self
            .decoder
            .backward(&params.decoder, &dec_trace, &rec_up)?;
        let cls_grads = self
            .classifier
            .backward(&params.classifier, &cls_trace, &cls_up)?;

        let mut dz = dec_grads.input;
        dz.add_scaled(&cls_grads.input, T::one())?;
        let mut loss = w_rec * rec.mean + w_cls * cls.mean;

        let mut regularizer = None;
        if let Some(state) = svdd.filter(|s| s.active) {
            let (reg, reg_grad) = svdd_reg_loss(z, labels, state)?;
            dz.add_scaled(&reg_grad, w_reg)?;
            loss += w_reg * reg;
            regularizer = Some(reg);
        }

        let enc_grads = self.encoder.backward(&params.encoder, &enc_trace, &dz)?;
        Ok(LossGradient {
            loss,
            regularizer,
            grads: MtaeParams {
                encoder: enc_grads.params,
                decoder: dec_grads.params,
                classifier: cls_grads.params,
            },
        })
    }
}

/// Multi-class SVDD hinge on embeddings `z` with class labels `y`:
///
/// `(1/k) Σ_i [ R_i² + (1/n_i) Σ_{j: y_j = i} max(0, ‖z_j − μ_i‖² − R_i²) ]`
///
/// `n_i` counts class-`i` rows of this batch; absent classes contribute only
/// `R_i²`. Radii are constants here.
pub fn svdd_reg_loss<T: Real>(
    z: &Matrix<T>,
    labels: &[usize],
    state: &SvddState<T>,
) -> Result<(T, Matrix<T>)> {
    if !state.active {
        return Err(Error::RegularizerInactive);
    }
    let k = state.centroids.len();
    if labels.len() != z.rows() {
        return Err(Error::Dimension {
            context: "svdd labels",
            expected: z.rows(),
            found: labels.len(),
        });
    }
    let mut counts = vec![0usize; k];
    for &y in labels {
        if y >= k {
            return Err(Error::LabelOutOfRange {
                label: y,
                class_count: k,
            });
        }
        counts[y] += 1;
    }
    let k_t = T::from_count(k);
    let mut class_hinge = vec![T::zero(); k];
    let mut grad = Matrix::zeros(z.rows(), z.cols());
    for (j, &y) in labels.iter().enumerate() {
        let centroid = &state.centroids[y];
        if centroid.len() != z.cols() {
            return Err(Error::Dimension {
                context: "svdd centroid",
                expected: z.cols(),
                found: centroid.len(),
            });
        }
        let r2 = state.radii[y] * state.radii[y];
        let excess = squared_distance(z.row(j), centroid) - r2;
        if excess > T::zero() {
            class_hinge[y] += excess;
            let scale = T::lit(2.0) / (k_t * T::from_count(counts[y]));
            for ((g, &zv), &mu) in grad.row_mut(j).iter_mut().zip(z.row(j)).zip(centroid) {
                *g = scale * (zv - mu);
            }
        }
    }
    let total = (0..k).fold(T::zero(), |acc, i| {
        let r2 = state.radii[i] * state.radii[i];
        let hinge = if counts[i] > 0 {
            class_hinge[i] / T::from_count(counts[i])
        } else {
            T::zero()
        };
        acc + r2 + hinge
    });
    Ok((total / k_t, grad))
}
