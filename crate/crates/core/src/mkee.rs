//! Pseudo-unknown generation.
//!
//! Cross-class mixup anchors are pushed by one normalized gradient-ascent
//! step on `J(x) = H(p(·|x)) − λ_ρ·ρ_batch(f(x))`, where `H` is the predictive
//! entropy of the head and `ρ_batch` a Gaussian kernel density of the feature
//! against the current batch, with bandwidth `σ₀ · median` pairwise distance.
//! Model parameters stay frozen; only the anchor moves.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{LtcError, Result};
use crate::losses::LabeledBatch;
use crate::math;
use crate::neuralcore::{ForwardTrace, ModelParams, ObjectiveValue};

/// Gradients with a smaller norm count as vanished and leave the anchor as is.
pub const MIN_GRAD_NORM: f64 = 1e-12;

/// Generator settings. Defaults: η = 1, ε = 0.05, λ_ρ = 0.1, σ₀ = 1,
/// p_gen = 0.3, one warm-up epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MkeeConfig {
    pub eta: f64,
    pub epsilon: f64,
    pub lambda_rho: f64,
    pub sigma0: f64,
    pub p_gen: f64,
    pub warmup_epochs: usize,
}

impl Default for MkeeConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            epsilon: 0.05,
            lambda_rho: 0.1,
            sigma0: 1.0,
            p_gen: 0.3,
            warmup_epochs: 1,
        }
    }
}

impl MkeeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(LtcError::InvalidConfig("mixup eta must be positive"));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(LtcError::InvalidConfig("epsilon must be non-negative"));
        }
        if !(self.lambda_rho >= 0.0 && self.lambda_rho.is_finite()) {
            return Err(LtcError::InvalidConfig("lambda_rho must be non-negative"));
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(LtcError::InvalidConfig("sigma0 must be positive"));
        }
        if !(0.0..=1.0).contains(&self.p_gen) {
            return Err(LtcError::InvalidConfig("p_gen must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// `λ·x_i + (1 − λ)·x_j` together with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct MixupAnchor {
    pub x: Vec<f64>,
    pub first: usize,
    pub second: usize,
    pub lambda: f64,
}

pub fn mixup(xi: &[f64], xj: &[f64], lambda: f64) -> Vec<f64> {
    xi.iter()
        .zip(xj)
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect()
}

/// One anchor per batch element, each from an ordered pair `(i, j)` with
/// `y_i ≠ y_j` drawn uniformly and `λ ~ Beta(η, η)`.
///
/// Returns an empty set when the batch holds a single class.
pub fn mixup_pairs<R: Rng + ?Sized>(
    batch: &LabeledBatch,
    eta: f64,
    rng: &mut R,
) -> Result<Vec<MixupAnchor>> {
    let n = batch.len();
    let Some(&y0) = batch.labels.first() else {
        return Ok(Vec::new());
    };
    if batch.labels.iter().all(|&y| y == y0) {
        return Ok(Vec::new());
    }
    let beta = Beta::new(eta, eta).map_err(|_| LtcError::InvalidConfig("mixup eta"))?;
    let mut anchors = Vec::with_capacity(n);
    for _ in 0..n {
        let (i, j) = loop {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if batch.labels[i] != batch.labels[j] {
                break (i, j);
            }
        };
        let lambda: f64 = beta.sample(rng);
        anchors.push(MixupAnchor {
            x: mixup(&batch.inputs[i], &batch.inputs[j], lambda),
            first: i,
            second: j,
            lambda,
        });
    }
    Ok(anchors)
}

/// `−Σ p_c log p_c` of the softmax of `logits`.
pub fn predictive_entropy(logits: &[f64]) -> f64 {
    let p = math::softmax(logits);
    -p.iter()
        .filter(|&&pc| pc > 0.0)
        .map(|&pc| pc * math::ln(pc))
        .sum::<f64>()
}

/// `∂H/∂ℓ_j = −p_j (log p_j + H)`
fn entropy_gradient(logits: &[f64]) -> (f64, Vec<f64>) {
    let p = math::softmax(logits);
    let logp: Vec<f64> = p
        .iter()
        .map(|&pc| if pc > 0.0 { math::ln(pc) } else { 0.0 })
        .collect();
    let h = -p.iter().zip(&logp).map(|(a, b)| a * b).sum::<f64>();
    let g = p.iter().zip(&logp).map(|(pj, lj)| -pj * (lj + h)).collect();
    (h, g)
}

/// Mean Gaussian kernel `exp(−|f − r|² / 2σ²)` over the references.
pub fn batch_density(feature: &[f64], refs: &[Vec<f64>], sigma: f64) -> Result<f64> {
    density_with_gradient(feature, refs, sigma, false).map(|(rho, _)| rho)
}

fn density_with_gradient(
    feature: &[f64],
    refs: &[Vec<f64>],
    sigma: f64,
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    if refs.is_empty() {
        return Err(LtcError::Empty("density reference set"));
    }
    if !(sigma > 0.0) {
        return Err(LtcError::InvalidConfig("bandwidth must be positive"));
    }
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    let r = refs.len() as f64;
    let mut rho = 0.0;
    let mut grad = if want_grad { vec![0.0; feature.len()] } else { Vec::new() };
    for reference in refs {
        if reference.len() != feature.len() {
            return Err(LtcError::DimensionMismatch {
                expected: feature.len(),
                actual: reference.len(),
            });
        }
        let k = math::exp(-math::squared_distance(feature, reference) * inv_two_var);
        rho += k;
        if want_grad {
            // ∂k/∂f = −k (f − r) / σ²
            let c = -k * 2.0 * inv_two_var / r;
            for ((g, fi), ri) in grad.iter_mut().zip(feature).zip(reference) {
                *g += c * (fi - ri);
            }
        }
    }
    Ok((rho / r, grad))
}

/// `σ₀ · median{|f_b − f_r|}` over every (batch, reference) pair, zero
/// distances included. The median of an even count is the mean of the two
/// middle values.
pub fn median_bandwidth(batch: &[Vec<f64>], refs: &[Vec<f64>], sigma0: f64) -> Result<f64> {
    if batch.is_empty() || refs.is_empty() {
        return Err(LtcError::Empty("bandwidth feature sets"));
    }
    let mut distances = Vec::with_capacity(batch.len() * refs.len());
    for b in batch {
        for r in refs {
            distances.push(math::distance(b, r));
        }
    }
    let median = median(&mut distances);
    if !(median > 0.0) {
        return Err(LtcError::DegenerateBandwidth);
    }
    Ok(sigma0 * median)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Value and output gradients of `J` on an existing forward trace.
pub fn objective_on_trace(
    trace: &ForwardTrace,
    refs: &[Vec<f64>],
    lambda_rho: f64,
    sigma: f64,
) -> Result<ObjectiveValue> {
    let (h, grad_logits) = entropy_gradient(&trace.logits);
    let (rho, grad_rho) = density_with_gradient(&trace.feature, refs, sigma, true)?;
    Ok(ObjectiveValue {
        value: h - lambda_rho * rho,
        grad_feature: math::scaled(&grad_rho, -lambda_rho),
        grad_logits,
    })
}

/// `J(x) = H(p(·|x)) − λ_ρ·ρ_batch(f(x))`
pub fn mkee_objective(
    params: &ModelParams,
    x: &[f64],
    refs: &[Vec<f64>],
    lambda_rho: f64,
    sigma: f64,
) -> Result<f64> {
    let trace = params.forward(x)?;
    Ok(predictive_entropy(&trace.logits) - lambda_rho * batch_density(&trace.feature, refs, sigma)?)
}

/// Result of one normalized ascent step from a mixup anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub x_pus: Vec<f64>,
    pub objective_before: f64,
    pub grad_norm: f64,
    /// Gradient norm was below [`MIN_GRAD_NORM`]; `x_pus` equals the anchor.
    pub vanished: bool,
}

/// `x_pus = x_mix + ε ∇ₓJ / |∇ₓJ|`, gradient taken at `x_mix` with frozen
/// parameters.
pub fn one_step_perturb(
    params: &ModelParams,
    x_mix: &[f64],
    refs: &[Vec<f64>],
    epsilon: f64,
    lambda_rho: f64,
    sigma: f64,
) -> Result<Perturbation> {
    let g = params.grad_wrt_input(x_mix, |t| objective_on_trace(t, refs, lambda_rho, sigma))?;
    let grad_norm = math::norm(&g.gradient);
    if !grad_norm.is_finite() {
        return Err(LtcError::NonFinite("input gradient"));
    }
    match ascent_step(x_mix, &g.gradient, epsilon) {
        Some(x_pus) => Ok(Perturbation {
            x_pus,
            objective_before: g.value,
            grad_norm,
            vanished: false,
        }),
        None => Ok(Perturbation {
            x_pus: x_mix.to_vec(),
            objective_before: g.value,
            grad_norm,
            vanished: true,
        }),
    }
}

/// `x + ε g / |g|`, or `None` when `|g|` is below [`MIN_GRAD_NORM`].
pub fn ascent_step(x: &[f64], gradient: &[f64], epsilon: f64) -> Option<Vec<f64>> {
    let norm = math::norm(gradient);
    if !(norm >= MIN_GRAD_NORM) {
        return None;
    }
    let mut out = x.to_vec();
    math::axpy(epsilon / norm, gradient, &mut out);
    Some(out)
}

/// Per-sample record of what the ascent step did.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PseudoDiagnostics {
    pub entropy_before: f64,
    pub entropy_after: f64,
    pub density_before: f64,
    pub density_after: f64,
    pub objective_before: f64,
    pub objective_after: f64,
    pub grad_norm: f64,
    pub vanished: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoBatch {
    pub anchors: Vec<MixupAnchor>,
    pub outputs: Vec<Vec<f64>>,
    pub diagnostics: Vec<PseudoDiagnostics>,
    pub sigma: f64,
}

impl PseudoBatch {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }
}

/// Runs the per-batch generator.
///
/// Returns `None` while `epoch < warmup_epochs` (epochs count from 0) or when
/// the Bernoulli(`p_gen`) trigger does not fire. When it fires, one
/// pseudo-unknown per batch element is produced; a single-class batch yields
/// an empty [`PseudoBatch`].
pub fn generate_pseudo_batch<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &LabeledBatch,
    cfg: &MkeeConfig,
    epoch: usize,
    rng: &mut R,
) -> Result<Option<PseudoBatch>> {
    if epoch < cfg.warmup_epochs || !rng.random_bool(cfg.p_gen) {
        return Ok(None);
    }
    let anchors = mixup_pairs(batch, cfg.eta, rng)?;
    if anchors.is_empty() {
        return Ok(Some(PseudoBatch {
            anchors,
            outputs: Vec::new(),
            diagnostics: Vec::new(),
            sigma: 0.0,
        }));
    }
    let refs = batch
        .inputs
        .iter()
        .map(|x| params.forward(x).map(|t| t.feature))
        .collect::<Result<Vec<_>>>()?;
    let sigma = median_bandwidth(&refs, &refs, cfg.sigma0)?;

    let mut outputs = Vec::with_capacity(anchors.len());
    let mut diagnostics = Vec::with_capacity(anchors.len());
    for anchor in &anchors {
        let step = one_step_perturb(params, &anchor.x, &refs, cfg.epsilon, cfg.lambda_rho, sigma)?;
        let before = params.forward(&anchor.x)?;
        let after = params.forward(&step.x_pus)?;
        let entropy_before = predictive_entropy(&before.logits);
        let entropy_after = predictive_entropy(&after.logits);
        let density_before = batch_density(&before.feature, &refs, sigma)?;
        let density_after = batch_density(&after.feature, &refs, sigma)?;
        diagnostics.push(PseudoDiagnostics {
            entropy_before,
            entropy_after,
            density_before,
            density_after,
            objective_before: entropy_before - cfg.lambda_rho * density_before,
            objective_after: entropy_after - cfg.lambda_rho * density_after,
            grad_norm: step.grad_norm,
            vanished: step.vanished,
        });
        outputs.push(step.x_pus);
    }
    Ok(Some(PseudoBatch {
        anchors,
        outputs,
        diagnostics,
        sigma,
    }))
}
