//! Training objectives: supervised contrastive, cross-entropy, the dual
//! max-margin hinge on prototype scores, and their weighted total.
//!
//! Every loss returns its value together with the gradient at the outputs it
//! consumes, so the caller can route those into [`ModelParams`] backprop.
//!
//! [`ModelParams`]: crate::neuralcore::ModelParams

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{LtcError, Result};
use crate::math;

/// Loss weights and margins. Defaults: T = 0.07, α = 0.3, γ_mm = 0.05,
/// m_pos = m_neg = 0.05.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossConfig {
    pub temperature: f64,
    pub alpha: f64,
    pub gamma_mm: f64,
    pub m_pos: f64,
    pub m_neg: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.07,
            alpha: 0.3,
            gamma_mm: 0.05,
            m_pos: 0.05,
            m_neg: 0.05,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(LtcError::InvalidConfig("temperature must be positive"));
        }
        let non_neg = [self.alpha, self.gamma_mm, self.m_pos, self.m_neg];
        if non_neg.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(LtcError::InvalidConfig(
                "alpha, gamma_mm and margins must be non-negative",
            ));
        }
        Ok(())
    }
}

/// A minibatch of labeled inputs and one augmented view per input.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub inputs: Vec<Vec<f64>>,
    pub views: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(inputs: Vec<Vec<f64>>, views: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() || views.len() != labels.len() {
            return Err(LtcError::ShapeMismatch("batch inputs/views/labels"));
        }
        Ok(Self {
            inputs,
            views,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Inputs followed by views, with labels duplicated to match.
    pub fn all_views(&self) -> (Vec<&[f64]>, Vec<usize>) {
        let xs = self
            .inputs
            .iter()
            .chain(&self.views)
            .map(Vec::as_slice)
            .collect();
        let labels = self.labels.iter().chain(&self.labels).copied().collect();
        (xs, labels)
    }
}

/// Scalar loss plus one gradient vector per batch element.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
}

/// Supervised contrastive loss over unit features.
///
/// For anchor `i`, positives are all other elements sharing its label and the
/// denominator runs over every element except `i`. The result is the mean of
/// the per-anchor losses.
pub fn sup_con_loss(features: &[Vec<f64>], labels: &[usize], temperature: f64) -> Result<LossGrad> {
    let n = features.len();
    if labels.len() != n {
        return Err(LtcError::ShapeMismatch("features/labels"));
    }
    if n < 2 {
        return Err(LtcError::Empty("contrastive batch needs at least two elements"));
    }
    if !(temperature > 0.0) {
        return Err(LtcError::InvalidConfig("temperature must be positive"));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(LtcError::ShapeMismatch("feature widths"));
    }

    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let s = math::dot(&features[i], &features[j]) / temperature;
            sim[i * n + j] = s;
            sim[j * n + i] = s;
        }
    }

    let mut grads = vec![vec![0.0; dim]; n];
    let mut total = 0.0;
    let mut coeff = vec![0.0; n];
    for i in 0..n {
        total += anchor_term(&sim[i * n..(i + 1) * n], labels, i, temperature, &mut coeff)?;
        for b in 0..n {
            if b == i || coeff[b] == 0.0 {
                continue;
            }
            let c = coeff[b] / n as f64;
            let fi = features[i].clone();
            math::axpy(c, &features[b], &mut grads[i]);
            math::axpy(c, &fi, &mut grads[b]);
        }
    }
    Ok(LossGrad {
        value: total / n as f64,
        grads,
    })
}

/// Loss of anchor `i` given its row of scaled similarities; writes
/// `∂L_i/∂(f_i·f_b)` into `coeff`.
fn anchor_term(
    row: &[f64],
    labels: &[usize],
    i: usize,
    temperature: f64,
    coeff: &mut [f64],
) -> Result<f64> {
    let n = row.len();
    let positives = (0..n).filter(|&p| p != i && labels[p] == labels[i]).count();
    if positives == 0 {
        return Err(LtcError::NoPositives(i));
    }
    let max = (0..n)
        .filter(|&b| b != i)
        .map(|b| row[b])
        .fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = (0..n).filter(|&b| b != i).map(|b| math::exp(row[b] - max)).sum();
    let log_denom = max + math::ln(denom);
    let inv_pos = 1.0 / positives as f64;

    let mut loss = 0.0;
    for b in 0..n {
        if b == i {
            coeff[b] = 0.0;
            continue;
        }
        let q = math::exp(row[b] - log_denom);
        let is_pos = labels[b] == labels[i];
        if is_pos {
            loss -= inv_pos * (row[b] - log_denom);
        }
        coeff[b] = (q - if is_pos { inv_pos } else { 0.0 }) / temperature;
    }
    Ok(loss)
}

/// Mean negative log-softmax of the true class; gradient is
/// `(softmax − onehot) / batch`.
pub fn ce_loss(logits: &[Vec<f64>], labels: &[usize]) -> Result<LossGrad> {
    let n = logits.len();
    if labels.len() != n {
        return Err(LtcError::ShapeMismatch("logits/labels"));
    }
    if n == 0 {
        return Err(LtcError::Empty("cross-entropy batch"));
    }
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(n);
    for (l, &y) in logits.iter().zip(labels) {
        if y >= l.len() {
            return Err(LtcError::LabelOutOfRange {
                label: y,
                num_classes: l.len(),
            });
        }
        total += math::log_sum_exp(l) - l[y];
        let mut g = math::softmax(l);
        g[y] -= 1.0;
        for v in &mut g {
            *v /= n as f64;
        }
        grads.push(g);
    }
    Ok(LossGrad {
        value: total / n as f64,
        grads,
    })
}

/// Output of [`max_margin_loss`].
#[derive(Debug, Clone, PartialEq)]
pub struct MarginLoss {
    pub pos: f64,
    pub neg: f64,
    pub total: f64,
    pub grad_known: Vec<f64>,
    pub grad_pseudo: Vec<f64>,
}

/// Dual hinge on prototype scores:
/// `L_pos = mean [(τ + m_pos) − s]₊` over known scores and
/// `L_neg = mean [s − (τ − m_neg)]₊` over pseudo scores.
///
/// An empty pseudo batch contributes `L_neg = 0`. At the kink the gradient
/// is zero.
pub fn max_margin_loss(
    known_scores: &[f64],
    pseudo_scores: &[f64],
    tau: f64,
    m_pos: f64,
    m_neg: f64,
) -> Result<MarginLoss> {
    if known_scores.is_empty() {
        return Err(LtcError::Empty("known scores"));
    }
    if !math::all_finite(known_scores) || !math::all_finite(pseudo_scores) || !tau.is_finite() {
        return Err(LtcError::NonFinite("margin scores"));
    }
    let nk = known_scores.len() as f64;
    let pos_bound = tau + m_pos;
    let mut pos = 0.0;
    let grad_known = known_scores
        .iter()
        .map(|&s| {
            let gap = pos_bound - s;
            if gap > 0.0 {
                pos += gap;
                -1.0 / nk
            } else {
                0.0
            }
        })
        .collect();
    pos /= nk;

    let mut neg = 0.0;
    let grad_pseudo = if pseudo_scores.is_empty() {
        Vec::new()
    } else {
        let np = pseudo_scores.len() as f64;
        let neg_bound = tau - m_neg;
        let g = pseudo_scores
            .iter()
            .map(|&s| {
                let gap = s - neg_bound;
                if gap > 0.0 {
                    neg += gap;
                    1.0 / np
                } else {
                    0.0
                }
            })
            .collect();
        neg /= np;
        g
    };
    Ok(MarginLoss {
        pos,
        neg,
        total: pos + neg,
        grad_known,
        grad_pseudo,
    })
}

/// `L_ce + α·L_sup + γ_mm·L_mm`; with `γ_mm = 0` this is the plain
/// contrastive-plus-cross-entropy objective.
#[inline]
pub fn total_loss(ce: f64, sup: f64, mm: f64, alpha: f64, gamma_mm: f64) -> f64 {
    ce + alpha * sup + gamma_mm * mm
}
