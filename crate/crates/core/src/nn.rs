//! Minimal dense network engine: forward/backward passes, MSE and softmax
//! cross-entropy losses with per-sample values, and SGD with weight decay.
//!
//! Losses are batch means and every gradient is divided by the batch size.
//! Dense weights are stored `[out, in]` row-major, so a layer computes
//! `y = x · Wᵀ + b` with samples as rows.

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense { in_dim: usize, out_dim: usize },
    Relu,
    Sigmoid,
}

/// A named-by-position block of parameters. Rank-2 tensors are weights,
/// rank-1 tensors are biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<T> {
    shape: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> ParamTensor<T> {
    pub fn new(shape: Vec<usize>, values: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Dimension {
                context: "parameter tensor",
                expected,
                found: values.len(),
            });
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            values: vec![T::zero(); len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn is_weight(&self) -> bool {
        self.shape.len() >= 2
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Ordered parameter tensors of one network: `[W₀, b₀, W₁, b₁, ...]` for its
/// dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    tensors: Vec<ParamTensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new(tensors: Vec<ParamTensor<T>>) -> Self {
        Self { tensors }
    }

    pub fn tensors(&self) -> &[ParamTensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor<T>] {
        &mut self.tensors
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor::zeros(t.shape.clone()))
                .collect(),
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(ParamTensor::len).sum()
    }

    pub fn values(&self) -> impl Iterator<Item = T> + '_ {
        self.tensors.iter().flat_map(|t| t.values.iter().copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut T> + '_ {
        self.tensors.iter_mut().flat_map(|t| t.values.iter_mut())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape == b.shape)
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &Self, factor: T) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Dimension {
                context: "parameter set addition",
                expected: self.scalar_count(),
                found: other.scalar_count(),
            });
        }
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += factor * b;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            weight_decay: 0.001,
            batch_size: 64,
            local_epochs: 5,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Activations recorded by [`Network::forward`]: entry 0 is the input batch and
/// entry `i + 1` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    activations: Vec<Matrix<T>>,
}

impl<T: Real> Trace<T> {
    pub fn output(&self) -> &Matrix<T> {
        self.activations.last().expect("trace holds the input")
    }

    pub fn input(&self) -> &Matrix<T> {
        &self.activations[0]
    }

    pub fn into_output(mut self) -> Matrix<T> {
        self.activations.pop().expect("trace holds the input")
    }
}

pub struct Gradients<T> {
    pub params: ParamSet<T>,
    pub input: Matrix<T>,
}

/// A validated stack of layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    layers: Vec<LayerSpec>,
    input_dim: usize,
    output_dim: usize,
}

impl Network {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        let mut current: Option<usize> = None;
        let mut input_dim = None;
        for layer in &layers {
            if let LayerSpec::Dense { in_dim, out_dim } = *layer {
                if in_dim == 0 || out_dim == 0 {
                    return Err(Error::Config(
                        "dense layer dimensions must be positive".into(),
                    ));
                }
                if let Some(prev) = current {
                    if prev != in_dim {
                        return Err(Error::Config(format!(
                            "dense layer expects {in_dim} inputs but previous layer yields {prev}"
                        )));
                    }
                }
                input_dim.get_or_insert(in_dim);
                current = Some(out_dim);
            }
        }
        match (input_dim, current) {
            (Some(input_dim), Some(output_dim)) => Ok(Self {
                layers,
                input_dim,
                output_dim,
            }),
            _ => Err(Error::Config(
                "network needs at least one dense layer".into(),
            )),
        }
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers
            .iter()
            .filter_map(|l| match *l {
                LayerSpec::Dense { in_dim, out_dim } => {
                    Some([vec![out_dim, in_dim], vec![out_dim]])
                }
                _ => None,
            })
            .flatten()
            .collect()
    }

    /// Weights uniform in `(-s, s)` with `s = sqrt(6 / (in + out))`, zero biases.
    pub fn init<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet<T> {
        let mut tensors = Vec::new();
        for layer in &self.layers {
            if let LayerSpec::Dense { in_dim, out_dim } = *layer {
                let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
                let weights = (0..in_dim * out_dim)
                    .map(|_| T::lit(rng.random_range(-limit..limit)))
                    .collect();
                tensors.push(ParamTensor {
                    shape: vec![out_dim, in_dim],
                    values: weights,
                });
                tensors.push(ParamTensor::zeros(vec![out_dim]));
            }
        }
        ParamSet::new(tensors)
    }

    fn check_params<T: Real>(&self, params: &ParamSet<T>) -> Result<()> {
        let shapes = self.param_shapes();
        if shapes.len() != params.tensors.len() {
            return Err(Error::Dimension {
                context: "parameter tensor count",
                expected: shapes.len(),
                found: params.tensors.len(),
            });
        }
        for (shape, tensor) in shapes.iter().zip(&params.tensors) {
            if *shape != tensor.shape {
                return Err(Error::Dimension {
                    context: "parameter tensor shape",
                    expected: shape.iter().product(),
                    found: tensor.len(),
                });
            }
        }
        Ok(())
    }

    pub fn forward<T: Real>(&self, params: &ParamSet<T>, batch: &Matrix<T>) -> Result<Trace<T>> {
        self.check_params(params)?;
        if batch.cols() != self.input_dim {
            return Err(Error::Dimension {
                context: "network input",
                expected: self.input_dim,
                found: batch.cols(),
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(batch.clone());
        let mut tensor = 0;
        for layer in &self.layers {
            let x = activations.last().expect("input pushed");
            let y = match *layer {
                LayerSpec::Dense { .. } => {
                    let out =
                        dense_forward(x, &params.tensors[tensor], &params.tensors[tensor + 1]);
                    tensor += 2;
                    out
                }
                LayerSpec::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
                LayerSpec::Sigmoid => x.map(sigmoid),
            };
            activations.push(y);
        }
        Ok(Trace { activations })
    }

    pub fn backward<T: Real>(
        &self,
        params: &ParamSet<T>,
        trace: &Trace<T>,
        upstream: &Matrix<T>,
    ) -> Result<Gradients<T>> {
        self.check_params(params)?;
        if trace.activations.len() != self.layers.len() + 1 {
            return Err(Error::Dimension {
                context: "activation trace length",
                expected: self.layers.len() + 1,
                found: trace.activations.len(),
            });
        }
        trace
            .output()
            .check_same_shape(upstream, "upstream gradient")?;

        let mut grads = params.zeros_like();
        let mut grad = upstream.clone();
        let mut tensor = params.tensors.len();
        for (index, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.activations[index];
            let output = &trace.activations[index + 1];
            grad = match *layer {
                LayerSpec::Dense { .. } => {
                    tensor -= 2;
                    let weight = &params.tensors[tensor];
                    let (w_grad, rest) = grads.tensors[tensor..].split_at_mut(1);
                    dense_backward(input, weight, &grad, &mut w_grad[0], &mut rest[0])
                }
                LayerSpec::Relu => {
                    let mut g = grad;
                    for (g, &x) in g.as_mut_slice().iter_mut().zip(input.as_slice()) {
                        if x <= T::zero() {
                            *g = T::zero();
                        }
                    }
                    g
                }
                LayerSpec::Sigmoid => {
                    let mut g = grad;
                    for (g, &y) in g.as_mut_slice().iter_mut().zip(output.as_slice()) {
                        *g *= y * (T::one() - y);
                    }
                    g
                }
            };
        }
        Ok(Gradients {
            params: grads,
            input: grad,
        })
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn dense_forward<T: Real>(
    x: &Matrix<T>,
    weight: &ParamTensor<T>,
    bias: &ParamTensor<T>,
) -> Matrix<T> {
    let out_dim = weight.shape[0];
    let in_dim = weight.shape[1];
    let mut out = Matrix::zeros(x.rows(), out_dim);
    for n in 0..x.rows() {
        let row = x.row(n);
        let out_row = out.row_mut(n);
        for ((out, w), b) in out_row
            .iter_mut()
            .zip(weight.values.chunks_exact(in_dim))
            .zip(&bias.values)
        {
            *out = *b + crate::matrix::dot(row, w);
        }
    }
    out
}

fn dense_backward<T: Real>(
    x: &Matrix<T>,
    weight: &ParamTensor<T>,
    upstream: &Matrix<T>,
    w_grad: &mut ParamTensor<T>,
    b_grad: &mut ParamTensor<T>,
) -> Matrix<T> {
    let in_dim = weight.shape[1];
    let mut input_grad = Matrix::zeros(x.rows(), in_dim);
    for n in 0..x.rows() {
        let x_row = x.row(n);
        let up_row = upstream.row(n);
        let in_row = input_grad.row_mut(n);
        for (o, &u) in up_row.iter().enumerate() {
            if u == T::zero() {
                continue;
            }
            b_grad.values[o] += u;
            let w = &weight.values[o * in_dim..(o + 1) * in_dim];
            let gw = &mut w_grad.values[o * in_dim..(o + 1) * in_dim];
            for i in 0..in_dim {
                gw[i] += u * x_row[i];
                in_row[i] += u * w[i];
            }
        }
    }
    input_grad
}

/// Per-sample losses, their batch mean, and the gradient of the mean with
/// respect to the loss input.
#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub per_sample: Vec<T>,
    pub mean: T,
    pub grad: Matrix<T>,
}

/// Mean squared error per sample (averaged over that sample's pixels).
pub fn mse_loss<T: Real>(reconstruction: &Matrix<T>, target: &Matrix<T>) -> Result<LossOutput<T>> {
    reconstruction.check_same_shape(target, "mse loss")?;
    let n = reconstruction.rows();
    let pixels = T::from_count(reconstruction.cols().max(1));
    let batch = T::from_count(n.max(1));
    let two = T::lit(2.0);
    let mut per_sample = Vec::with_capacity(n);
    let mut grad = Matrix::zeros(n, reconstruction.cols());
    for i in 0..n {
        let mut sum = T::zero();
        let g = grad.row_mut(i);
        for (j, (&r, &t)) in reconstruction.row(i).iter().zip(target.row(i)).enumerate() {
            let d = r - t;
            sum += d * d;
            g[j] = two * d / (pixels * batch);
        }
        per_sample.push(sum / pixels);
    }
    let mean = mean_of(&per_sample);
    Ok(LossOutput {
        per_sample,
        mean,
        grad,
    })
}

/// Softmax cross-entropy per sample with a log-sum-exp shift.
pub fn ce_loss<T: Real>(logits: &Matrix<T>, labels: &[usize]) -> Result<LossOutput<T>> {
    if logits.rows() != labels.len() {
        return Err(Error::Dimension {
            context: "cross-entropy labels",
            expected: logits.rows(),
            found: labels.len(),
        });
    }
    let k = logits.cols();
    let batch = T::from_count(labels.len().max(1));
    let mut per_sample = Vec::with_capacity(labels.len());
    let mut grad = Matrix::zeros(logits.rows(), k);
    for (i, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::LabelOutOfRange {
                label,
                class_count: k,
            });
        }
        let row = logits.row(i);
        let shift = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum_exp: T = row.iter().map(|&v| (v - shift).exp()).sum();
        let log_norm = shift + sum_exp.ln();
        per_sample.push(log_norm - row[label]);
        let g = grad.row_mut(i);
        for (c, &v) in row.iter().enumerate() {
            let p = (v - log_norm).exp();
            g[c] = (p - if c == label { T::one() } else { T::zero() }) / batch;
        }
    }
    let mean = mean_of(&per_sample);
    Ok(LossOutput {
        per_sample,
        mean,
        grad,
    })
}

pub(crate) fn mean_of<T: Real>(values: &[T]) -> T {
    if values.is_empty() {
        T::zero()
    } else {
        values.iter().copied().sum::<T>() / T::from_count(values.len())
    }
}

/// `w ← w − η (g + λ w)`, with the decay term applied to weights only.
pub fn sgd_step<T: Real>(
    params: &mut ParamSet<T>,
    grads: &ParamSet<T>,
    cfg: &SgdConfig,
) -> Result<()> {
    if !params.same_shape(grads) {
        return Err(Error::Dimension {
            context: "sgd step",
            expected: params.scalar_count(),
            found: grads.scalar_count(),
        });
    }
    let lr = T::lit(cfg.learning_rate);
    let decay = T::lit(cfg.weight_decay);
    for (p, g) in params.tensors.iter_mut().zip(&grads.tensors) {
        let decay = if p.is_weight() { decay } else { T::zero() };
        for (w, &dw) in p.values.iter_mut().zip(&g.values) {
            *w -= lr * (dw + decay * *w);
        }
    }
    Ok(())
}
