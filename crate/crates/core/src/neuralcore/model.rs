use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::DenseMatrix;
use crate::error::{LtcError, Result};
use crate::math;

/// Embeddings with a norm below this are rejected.
pub const MIN_EMBEDDING_NORM: f64 = 1e-12;

/// Affine layer `y = W x + b` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Linear {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: DenseMatrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    pub fn new(weight: DenseMatrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(LtcError::DimensionMismatch {
                expected: weight.rows(),
                actual: bias.len(),
            });
        }
        Ok(Self { weight, bias })
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.matvec(x);
        for (yi, bi) in y.iter_mut().zip(&self.bias) {
            *yi += bi;
        }
        y
    }
}

/// Layer sizes of the encoder and classifier head.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub num_classes: usize,
}

impl Architecture {
    /// Two ReLU hidden layers of width `hidden` followed by the feature projection.
    pub fn mlp(input_dim: usize, hidden: usize, feature_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![hidden, hidden],
            feature_dim,
            num_classes,
        }
    }
}

/// Encoder `z(·)` (ReLU MLP whose last layer is linear) plus the linear head
/// applied to the normalized feature.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelParams {
    pub encoder: Vec<Linear>,
    pub head: Linear,
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Input to each encoder layer; entry 0 is `x` itself.
    pub layer_inputs: Vec<Vec<f64>>,
    /// Pre-activation of each encoder layer; the last one is the embedding.
    pub pre_activations: Vec<Vec<f64>>,
    pub embedding_norm: f64,
    pub feature: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ForwardTrace {
    pub fn input(&self) -> &[f64] {
        &self.layer_inputs[0]
    }

    pub fn embedding(&self) -> &[f64] {
        self.pre_activations.last().expect("encoder has at least one layer")
    }
}

impl ModelParams {
    pub fn new(encoder: Vec<Linear>, head: Linear) -> Result<Self> {
        if encoder.is_empty() {
            return Err(LtcError::Empty("encoder layers"));
        }
        for pair in encoder.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(LtcError::DimensionMismatch {
                    expected: pair[0].output_dim(),
                    actual: pair[1].input_dim(),
                });
            }
        }
        let feature_dim = encoder[encoder.len() - 1].output_dim();
        if head.input_dim() != feature_dim {
            return Err(LtcError::DimensionMismatch {
                expected: feature_dim,
                actual: head.input_dim(),
            });
        }
        Ok(Self { encoder, head })
    }

    /// He-uniform weights for the ReLU layers, Glorot-uniform for the
    /// feature projection and head, zero biases.
    pub fn init<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Self> {
        if arch.input_dim == 0 || arch.feature_dim == 0 || arch.num_classes == 0 {
            return Err(LtcError::InvalidConfig("layer dimensions must be positive"));
        }
        let mut dims = Vec::with_capacity(arch.hidden.len() + 2);
        dims.push(arch.input_dim);
        dims.extend(arch.hidden.iter().copied());
        dims.push(arch.feature_dim);
        if dims.contains(&0) {
            return Err(LtcError::InvalidConfig("layer dimensions must be positive"));
        }
        let n_layers = dims.len() - 1;
        let encoder = (0..n_layers)
            .map(|l| {
                let (fan_in, fan_out) = (dims[l], dims[l + 1]);
                let limit = if l + 1 < n_layers {
                    math::sqrt(6.0 / fan_in as f64)
                } else {
                    math::sqrt(6.0 / (fan_in + fan_out) as f64)
                };
                random_linear(fan_in, fan_out, limit, rng)
            })
            .collect();
        let limit = math::sqrt(6.0 / (arch.feature_dim + arch.num_classes) as f64);
        let head = random_linear(arch.feature_dim, arch.num_classes, limit, rng);
        Self::new(encoder, head)
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.head.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.head.output_dim()
    }

    /// Same shapes, all zeros. Used for gradients and optimizer moments.
    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self
                .encoder
                .iter()
                .map(|l| Linear::zeros(l.input_dim(), l.output_dim()))
                .collect(),
            head: Linear::zeros(self.head.input_dim(), self.head.output_dim()),
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        let dims = |l: &Linear| (l.input_dim(), l.output_dim());
        self.encoder.len() == other.encoder.len()
            && self.encoder.iter().zip(&other.encoder).all(|(a, b)| dims(a) == dims(b))
            && dims(&self.head) == dims(&other.head)
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Every parameter tensor as a flat slice, in a fixed order: per encoder
    /// layer weight then bias, then head weight and bias.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.encoder.len() + 2);
        for layer in &self.encoder {
            out.push(layer.weight.data());
            out.push(layer.bias.as_slice());
        }
        out.push(self.head.weight.data());
        out.push(self.head.bias.as_slice());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.encoder.len() + 2);
        for layer in &mut self.encoder {
            out.push(layer.weight.data_mut());
            out.push(layer.bias.as_mut_slice());
        }
        out.push(self.head.weight.data_mut());
        out.push(self.head.bias.as_mut_slice());
        out
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, scale: f64, other: &Self) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            math::axpy(scale, src, dst);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| math::all_finite(t))
    }

    /// Runs the encoder, normalizes the embedding and applies the head.
    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.input_dim() {
            return Err(LtcError::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let n = self.encoder.len();
        let mut layer_inputs = Vec::with_capacity(n);
        let mut pre_activations = Vec::with_capacity(n);
        let mut a = x.to_vec();
        for (l, layer) in self.encoder.iter().enumerate() {
            let pre = layer.apply(&a);
            let next = if l + 1 < n {
                pre.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
            } else {
                Vec::new()
            };
            layer_inputs.push(a);
            pre_activations.push(pre);
            a = next;
        }
        let z = &pre_activations[n - 1];
        let embedding_norm = math::norm(z);
        if !(embedding_norm >= MIN_EMBEDDING_NORM) {
            return Err(LtcError::DegenerateEmbedding(embedding_norm));
        }
        let feature = math::scaled(z, 1.0 / embedding_norm);
        let logits = self.head.apply(&feature);
        Ok(ForwardTrace {
            layer_inputs,
            pre_activations,
            embedding_norm,
            feature,
            logits,
        })
    }

    /// Parameter gradients for a loss whose gradients at the outputs
    /// `(f(x), ℓ(x))` are `grad_feature` and `grad_logits`.
    pub fn backprop_params(
        &self,
        trace: &ForwardTrace,
        grad_feature: &[f64],
        grad_logits: &[f64],
    ) -> Result<ModelParams> {
        let mut grads = self.zeros_like();
        self.backward(trace, grad_feature, grad_logits, Some(&mut grads))?;
        Ok(grads)
    }

    /// Like [`Self::backprop_params`] but accumulates into `grads` and returns
    /// the gradient with respect to the input.
    pub fn accumulate_gradients(
        &self,
        trace: &ForwardTrace,
        grad_feature: &[f64],
        grad_logits: &[f64],
        grads: &mut ModelParams,
    ) -> Result<Vec<f64>> {
        if !self.same_shape(grads) {
            return Err(LtcError::ShapeMismatch("gradient accumulator"));
        }
        self.backward(trace, grad_feature, grad_logits, Some(grads))
    }

    /// Gradient with respect to the input only; parameters are not touched.
    pub fn input_gradient(
        &self,
        trace: &ForwardTrace,
        grad_feature: &[f64],
        grad_logits: &[f64],
    ) -> Result<Vec<f64>> {
        self.backward(trace, grad_feature, grad_logits, None)
    }

    /// Evaluates `objective` on the forward trace at `x` and returns its value
    /// together with `∇ₓ objective`.
    pub fn grad_wrt_input<F>(&self, x: &[f64], objective: F) -> Result<InputGradient>
    where
        F: FnOnce(&ForwardTrace) -> Result<ObjectiveValue>,
    {
        let trace = self.forward(x)?;
        let obj = objective(&trace)?;
        let gradient = self.input_gradient(&trace, &obj.grad_feature, &obj.grad_logits)?;
        Ok(InputGradient {
            value: obj.value,
            gradient,
            trace,
        })
    }

    fn backward(
        &self,
        trace: &ForwardTrace,
        grad_feature: &[f64],
        grad_logits: &[f64],
        mut grads: Option<&mut ModelParams>,
    ) -> Result<Vec<f64>> {
        let d = self.feature_dim();
        if grad_feature.len() != d || trace.feature.len() != d {
            return Err(LtcError::ShapeMismatch("feature gradient"));
        }
        if grad_logits.len() != self.num_classes() || trace.logits.len() != self.num_classes() {
            return Err(LtcError::ShapeMismatch("logit gradient"));
        }
        if trace.layer_inputs.len() != self.encoder.len() {
            return Err(LtcError::ShapeMismatch("forward trace depth"));
        }

        // head
        let mut g_f = grad_feature.to_vec();
        math::axpy(1.0, &self.head.weight.matvec_transposed(grad_logits), &mut g_f);
        if let Some(g) = grads.as_deref_mut() {
            g.head.weight.add_outer(1.0, grad_logits, &trace.feature);
            math::axpy(1.0, grad_logits, &mut g.head.bias);
        }

        // f = z / |z|
        let f = &trace.feature;
        let proj = math::dot(f, &g_f);
        let mut g_pre: Vec<f64> = g_f
            .iter()
            .zip(f)
            .map(|(gi, fi)| (gi - fi * proj) / trace.embedding_norm)
            .collect();

        for l in (0..self.encoder.len()).rev() {
            let layer = &self.encoder[l];
            if let Some(g) = grads.as_deref_mut() {
                g.encoder[l]
                    .weight
                    .add_outer(1.0, &g_pre, &trace.layer_inputs[l]);
                math::axpy(1.0, &g_pre, &mut g.encoder[l].bias);
            }
            let mut g_in = layer.weight.matvec_transposed(&g_pre);
            if l > 0 {
                for (gi, &pre) in g_in.iter_mut().zip(&trace.pre_activations[l - 1]) {
                    if pre <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            g_pre = g_in;
        }
        Ok(g_pre)
    }
}

/// Value and output-side gradients of a scalar functional of `(f(x), ℓ(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    pub grad_feature: Vec<f64>,
    pub grad_logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputGradient {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub trace: ForwardTrace,
}

fn random_linear<R: Rng + ?Sized>(input: usize, output: usize, limit: f64, rng: &mut R) -> Linear {
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite positive limit");
    Linear {
        weight: DenseMatrix::from_fn(output, input, |_, _| dist.sample(rng)),
        bias: vec![0.0; output],
    }
}
