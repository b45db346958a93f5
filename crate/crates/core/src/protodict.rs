//! Prototype dictionary and adaptive novelty threshold.
//!
//! Known-class prototypes are normalized class means, refreshed during
//! training by a normalized running mean. At inference a feature either
//! matches its most similar prototype or, when the best cosine falls strictly
//! below `τ`, becomes a new prototype itself. `τ` follows an exponential
//! moving average toward the midpoint of an upper quantile of known scores and
//! a lower quantile of pseudo-unknown scores.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{LtcError, Result};
use crate::math;

pub const DEFAULT_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PrototypeStore {
    prototypes: Vec<Vec<f64>>,
    accumulators: Vec<Vec<f64>>,
    k_known: usize,
    momentum: f64,
}

/// Best prototype for a feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Match {
    pub index: usize,
    pub s_max: f64,
    pub scores: Vec<f64>,
}

/// Streaming decision for one item.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Assignment {
    pub index: usize,
    pub s_max: f64,
    pub spawned: bool,
}

/// Normalized class means of `features` grouped by `labels ∈ 0..k`.
pub fn init_prototypes(features: &[Vec<f64>], labels: &[usize], k: usize) -> Result<PrototypeStore> {
    if features.len() != labels.len() {
        return Err(LtcError::ShapeMismatch("features/labels"));
    }
    let Some(dim) = features.first().map(Vec::len) else {
        return Err(LtcError::Empty("prototype features"));
    };
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (f, &y) in features.iter().zip(labels) {
        if y >= k {
            return Err(LtcError::LabelOutOfRange {
                label: y,
                num_classes: k,
            });
        }
        if f.len() != dim {
            return Err(LtcError::DimensionMismatch {
                expected: dim,
                actual: f.len(),
            });
        }
        math::axpy(1.0, f, &mut sums[y]);
        counts[y] += 1;
    }
    let mut prototypes = Vec::with_capacity(k);
    let mut accumulators = Vec::with_capacity(k);
    for (class, (sum, &count)) in sums.into_iter().zip(&counts).enumerate() {
        if count == 0 {
            return Err(LtcError::EmptyClass(class));
        }
        let mean = math::scaled(&sum, 1.0 / count as f64);
        let norm = math::norm(&mean);
        if !(norm >= 1e-12) {
            return Err(LtcError::DegenerateClassMean(class));
        }
        prototypes.push(math::scaled(&mean, 1.0 / norm));
        accumulators.push(mean);
    }
    Ok(PrototypeStore {
        prototypes,
        accumulators,
        k_known: k,
        momentum: DEFAULT_MOMENTUM,
    })
}

impl PrototypeStore {
    /// Rebuilds a store from saved unit prototypes; the first `k_known` are
    /// the known classes. Accumulators restart at the prototypes.
    pub fn from_prototypes(prototypes: Vec<Vec<f64>>, k_known: usize) -> Result<Self> {
        if k_known > prototypes.len() {
            return Err(LtcError::ShapeMismatch("k_known exceeds prototype count"));
        }
        if let Some(dim) = prototypes.first().map(Vec::len) {
            for p in &prototypes {
                if p.len() != dim {
                    return Err(LtcError::DimensionMismatch {
                        expected: dim,
                        actual: p.len(),
                    });
                }
                if (math::norm(p) - 1.0).abs() > 1e-9 {
                    return Err(LtcError::InvalidConfig("prototypes must be unit norm"));
                }
            }
        }
        let accumulators = prototypes[..k_known].to_vec();
        Ok(Self {
            prototypes,
            accumulators,
            k_known,
            momentum: DEFAULT_MOMENTUM,
        })
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn k_known(&self) -> usize {
        self.k_known
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn num_spawned(&self) -> usize {
        self.prototypes.len() - self.k_known
    }

    pub fn dim(&self) -> Option<usize> {
        self.prototypes.first().map(Vec::len)
    }

    pub fn prototypes(&self) -> &[Vec<f64>] {
        &self.prototypes
    }

    pub fn known_prototypes(&self) -> &[Vec<f64>] {
        &self.prototypes[..self.k_known]
    }

    /// Highest cosine similarity over all current prototypes; ties go to the
    /// lowest index.
    pub fn match_feature(&self, feature: &[f64]) -> Result<Match> {
        best_match(&self.prototypes, feature)
    }

    /// Same as [`Self::match_feature`] restricted to known-class prototypes.
    pub fn match_known(&self, feature: &[f64]) -> Result<Match> {
        best_match(self.known_prototypes(), feature)
    }

    /// Returns the best existing index when `s_max ≥ τ`; otherwise appends
    /// `feature` as a new prototype and returns its index.
    pub fn assign_or_spawn(&mut self, feature: &[f64], tau: f64) -> Result<Assignment> {
        if self.prototypes.is_empty() {
            self.prototypes.push(feature.to_vec());
            return Ok(Assignment {
                index: 0,
                s_max: f64::NEG_INFINITY,
                spawned: true,
            });
        }
        let m = self.match_feature(feature)?;
        if m.s_max < tau {
            self.prototypes.push(feature.to_vec());
            Ok(Assignment {
                index: self.prototypes.len() - 1,
                s_max: m.s_max,
                spawned: true,
            })
        } else {
            Ok(Assignment {
                index: m.index,
                s_max: m.s_max,
                spawned: false,
            })
        }
    }

    /// `m_y ← μ m_y + (1 − μ) f`, `P_y = m_y / |m_y|` for a known class `y`.
    pub fn running_update(&mut self, feature: &[f64], y: usize) -> Result<()> {
        if y >= self.k_known {
            return Err(LtcError::LabelOutOfRange {
                label: y,
                num_classes: self.k_known,
            });
        }
        let mu = self.momentum;
        let acc = &mut self.accumulators[y];
        if acc.len() != feature.len() {
            return Err(LtcError::DimensionMismatch {
                expected: acc.len(),
                actual: feature.len(),
            });
        }
        let next: Vec<f64> = acc
            .iter()
            .zip(feature)
            .map(|(m, f)| mu * m + (1.0 - mu) * f)
            .collect();
        let norm = math::norm(&next);
        if !(norm >= 1e-12) {
            return Err(LtcError::DegenerateClassMean(y));
        }
        self.prototypes[y] = math::scaled(&next, 1.0 / norm);
        *acc = next;
        Ok(())
    }
}

fn best_match(prototypes: &[Vec<f64>], feature: &[f64]) -> Result<Match> {
    if prototypes.is_empty() {
        return Err(LtcError::Empty("prototype store"));
    }
    let mut scores = Vec::with_capacity(prototypes.len());
    let mut index = 0;
    let mut s_max = f64::NEG_INFINITY;
    for (k, p) in prototypes.iter().enumerate() {
        if p.len() != feature.len() {
            return Err(LtcError::DimensionMismatch {
                expected: p.len(),
                actual: feature.len(),
            });
        }
        let s = math::dot(p, feature);
        if s > s_max {
            s_max = s;
            index = k;
        }
        scores.push(s);
    }
    Ok(Match {
        index,
        s_max,
        scores,
    })
}

/// Threshold hyperparameters. Defaults: τ_init = 0.7, β = 0.001,
/// q_pos = 0.8, q_neg = 0.2.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ThresholdConfig {
    pub tau_init: f64,
    pub beta: f64,
    pub q_pos: f64,
    pub q_neg: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            tau_init: 0.7,
            beta: 0.001,
            q_pos: 0.8,
            q_neg: 0.2,
        }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.tau_init) {
            return Err(LtcError::InvalidConfig("tau_init must lie in [-1, 1]"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(LtcError::InvalidConfig("beta must lie in [0, 1]"));
        }
        let open = |q: f64| q > 0.0 && q < 1.0;
        if !open(self.q_pos) || !open(self.q_neg) {
            return Err(LtcError::InvalidConfig("quantile levels must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// One recorded threshold update.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuantileTargets {
    pub u_pos: f64,
    pub u_neg: f64,
    pub tau_target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ThresholdStep {
    pub targets: QuantileTargets,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ThresholdState {
    pub tau: f64,
    pub config: ThresholdConfig,
    pub history: Vec<ThresholdStep>,
}

impl ThresholdState {
    pub fn new(config: ThresholdConfig) -> Self {
        Self {
            tau: config.tau_init,
            config,
            history: Vec::new(),
        }
    }

    /// `τ ← (1 − β) τ + β τ_target`
    pub fn ema_update(&mut self, targets: QuantileTargets) -> f64 {
        let beta = self.config.beta;
        self.tau = (1.0 - beta) * self.tau + beta * targets.tau_target;
        self.history.push(ThresholdStep {
            targets,
            tau: self.tau,
        });
        self.tau
    }
}

/// Linear interpolation between order statistics at rank `q (n − 1)`.
pub fn percentile(scores: &[f64], q: f64) -> Option<f64> {
    if scores.is_empty() {
        return None;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = libm::floor(rank) as usize;
    let hi = libm::ceil(rank) as usize;
    let frac = rank - lo as f64;
    Some(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// `u_pos`, `u_neg` and their midpoint; `None` when either set is empty.
pub fn quantile_targets(
    known_scores: &[f64],
    pseudo_scores: &[f64],
    q_pos: f64,
    q_neg: f64,
) -> Option<QuantileTargets> {
    let u_pos = percentile(known_scores, q_pos)?;
    let u_neg = percentile(pseudo_scores, q_neg)?;
    Some(QuantileTargets {
        u_pos,
        u_neg,
        tau_target: 0.5 * (u_pos + u_neg),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(v: &[f64]) -> Vec<f64> {
        math::scaled(v, 1.0 / math::norm(v))
    }

    fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        unit(&(0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>())
    }

    #[test]
    fn single_sample_classes() {
        let f = vec![unit(&[1.0, 2.0]), unit(&[-3.0, 1.0])];
        let store = init_prototypes(&f, &[0, 1], 2).unwrap();
        for (p, q) in store.prototypes().iter().zip(&f) {
            assert!(math::distance(p, q) < 1e-15);
        }
        assert_eq!(store.k_known(), 2);
    }

    #[test]
    fn two_sample_class_mean_is_normalized() {
        let store = init_prototypes(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0, 0], 1).unwrap();
        let s = core::f64::consts::FRAC_1_SQRT_2;
        assert!((store.prototypes()[0][0] - s).abs() < 1e-15);
        assert!((store.prototypes()[0][1] - s).abs() < 1e-15);
    }

    #[test]
    fn antipodal_and_empty_classes_fail() {
        assert_eq!(
            init_prototypes(&[vec![1.0, 0.0], vec![-1.0, 0.0]], &[0, 0], 1),
            Err(LtcError::DegenerateClassMean(0))
        );
        assert_eq!(
            init_prototypes(&[vec![1.0, 0.0]], &[0], 2),
            Err(LtcError::EmptyClass(1))
        );
    }

    #[test]
    fn match_exact_and_orthogonal() {
        let ps = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let store = PrototypeStore::from_prototypes(ps, 2).unwrap();
        let m = store.match_feature(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!((m.index, m.s_max), (1, 1.0));
        let m = store.match_feature(&[0.0, 0.0, 1.0]).unwrap();
        assert_eq!((m.index, m.s_max), (0, 0.0));
    }

    #[test]
    fn match_agrees_with_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let ps: Vec<Vec<f64>> = (0..5).map(|_| random_unit(&mut rng, 4)).collect();
            let f = random_unit(&mut rng, 4);
            let mut best = 0;
            for k in 1..5 {
                if math::dot(&ps[k], &f) > math::dot(&ps[best], &f) {
                    best = k;
                }
            }
            let store = PrototypeStore::from_prototypes(ps, 5).unwrap();
            assert_eq!(store.match_feature(&f).unwrap().index, best);
        }
    }

    #[test]
    fn empty_store_cannot_match() {
        let store = PrototypeStore::from_prototypes(Vec::new(), 0).unwrap();
        assert_eq!(store.match_feature(&[1.0]), Err(LtcError::Empty("prototype store")));
    }

    #[test]
    fn assign_or_spawn_threshold_boundaries() {
        let ps = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let mut store = PrototypeStore::from_prototypes(ps, 2).unwrap();
        let c = 0.9f64;
        let f = vec![c, libm::sqrt(1.0 - c * c)];
        let a = store.assign_or_spawn(&f, 0.7).unwrap();
        assert_eq!((a.index, a.spawned), (0, false));

        let c = 0.3f64;
        let g = vec![c, -libm::sqrt(1.0 - c * c)];
        let a = store.assign_or_spawn(&g, 0.7).unwrap();
        assert_eq!((a.index, a.spawned), (2, true));
        assert_eq!(store.len(), 3);
        assert_eq!(store.prototypes()[2], g);

        // s_max exactly τ stays with the existing prototype.
        let a = store.assign_or_spawn(&[0.0, 1.0], 1.0).unwrap();
        assert_eq!((a.index, a.spawned), (1, false));
    }

    #[test]
    fn running_update_extremes() {
        let f0 = vec![vec![1.0, 0.0]];
        let target = unit(&[1.0, 1.0]);
        let mut jump = init_prototypes(&f0, &[0], 1).unwrap().with_momentum(0.0);
        jump.running_update(&target, 0).unwrap();
        assert!(math::distance(&jump.prototypes()[0], &target) < 1e-15);

        let mut frozen = init_prototypes(&f0, &[0], 1).unwrap().with_momentum(1.0);
        frozen.running_update(&target, 0).unwrap();
        assert_eq!(frozen.prototypes()[0], vec![1.0, 0.0]);
    }

    #[test]
    fn running_update_two_steps_unrolled() {
        let m0 = [1.0, 0.0];
        let a = unit(&[1.0, 1.0]);
        let b = unit(&[-1.0, 2.0]);
        let mut store = init_prototypes(&[m0.to_vec()], &[0], 1).unwrap();
        store.running_update(&a, 0).unwrap();
        store.running_update(&b, 0).unwrap();
        // m2 = 0.81 m0 + 0.09 a + 0.1 b
        let m2: Vec<f64> = (0..2)
            .map(|i| 0.9 * (0.9 * m0[i] + 0.1 * a[i]) + 0.1 * b[i])
            .collect();
        let expect = unit(&m2);
        for i in 0..2 {
            assert!((store.prototypes()[0][i] - expect[i]).abs() < 1e-15);
        }
        assert!(store.running_update(&a, 1).is_err());
    }

    #[test]
    fn quantile_examples() {
        let t = quantile_targets(&[0.9; 6], &[0.3; 4], 0.8, 0.2).unwrap();
        assert!((t.tau_target - 0.6).abs() < 1e-15);
        let d = ThresholdConfig::default();
        assert_eq!((d.q_pos, d.q_neg), (0.8, 0.2));
        // rank 0.8 * 3 = 2.4 → 0.9 + 0.4 * (1.0 - 0.9)
        let u = percentile(&[1.0, 0.5, 0.9, 0.7], 0.8).unwrap();
        assert!((u - 0.94).abs() < 1e-12);
        assert!(quantile_targets(&[], &[0.1], 0.8, 0.2).is_none());
        assert!(quantile_targets(&[0.1], &[], 0.8, 0.2).is_none());
    }

    #[test]
    fn ema_examples() {
        let targets = |t| QuantileTargets {
            u_pos: t,
            u_neg: t,
            tau_target: t,
        };
        let cfg = |beta| ThresholdConfig {
            beta,
            ..ThresholdConfig::default()
        };
        let mut s = ThresholdState::new(cfg(0.0));
        assert_eq!(s.ema_update(targets(0.2)), 0.7);
        let mut s = ThresholdState::new(cfg(1.0));
        assert_eq!(s.ema_update(targets(0.2)), 0.2);
        let mut s = ThresholdState::new(cfg(0.001));
        assert!((s.ema_update(targets(0.6)) - 0.6999).abs() < 1e-12);
        assert_eq!(s.history.len(), 1);
    }
}
