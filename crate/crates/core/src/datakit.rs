//! Synthetic Gaussian-mixture benchmarks, the seen/novel split and the
//! labeled-free query stream.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{LtcError, Result};
use crate::math;

/// Synthetic benchmark parameters. Defaults: dim 16, 5 known + 5 novel
/// classes, 100 samples per class, class means at radius 3, unit noise.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyntheticSpec {
    pub dim: usize,
    pub k_known: usize,
    pub k_novel: usize,
    pub samples_per_class: usize,
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dim: 16,
            k_known: 5,
            k_novel: 5,
            samples_per_class: 100,
            separation: 3.0,
            noise: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn num_classes(&self) -> usize {
        self.k_known + self.k_novel
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_known < 2 {
            return Err(LtcError::InvalidConfig("at least two known classes are required"));
        }
        if self.dim < 2 {
            return Err(LtcError::InvalidConfig("dimension must be at least 2"));
        }
        if self.samples_per_class < 2 {
            return Err(LtcError::InvalidConfig("need at least two samples per class"));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(LtcError::InvalidConfig("separation must be non-negative"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(LtcError::InvalidConfig("noise must be non-negative"));
        }
        Ok(())
    }
}

/// Labeled vectors of a common width.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub samples: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(samples: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(LtcError::ShapeMismatch("samples/labels"));
        }
        let Some(dim) = samples.first().map(Vec::len) else {
            return Err(LtcError::Empty("dataset"));
        };
        for s in &samples {
            if s.len() != dim {
                return Err(LtcError::DimensionMismatch {
                    expected: dim,
                    actual: s.len(),
                });
            }
            if !math::all_finite(s) {
                return Err(LtcError::NonFinite("dataset sample"));
            }
        }
        Ok(Self {
            dim,
            samples,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct labels in ascending order.
    pub fn classes(&self) -> Vec<usize> {
        self.labels
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

/// Class means are random directions scaled to `separation`; samples add
/// isotropic Gaussian noise. Labels are `0..k_known + k_novel`.
pub fn synth_mixture<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Result<Dataset> {
    spec.validate()?;
    let means: Vec<Vec<f64>> = (0..spec.num_classes())
        .map(|_| loop {
            let v: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(rng)).collect();
            let n = math::norm(&v);
            if n > 1e-12 {
                break math::scaled(&v, spec.separation / n);
            }
        })
        .collect();
    let noise = Normal::new(0.0, spec.noise).map_err(|_| LtcError::InvalidConfig("noise"))?;
    let mut samples = Vec::with_capacity(spec.num_classes() * spec.samples_per_class);
    let mut labels = Vec::with_capacity(samples.capacity());
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            samples.push(mean.iter().map(|m| m + noise.sample(rng)).collect());
            labels.push(class);
        }
    }
    Dataset::new(samples, labels)
}

/// [`synth_mixture`] driven by `spec.seed`.
pub fn synth_seeded(spec: &SyntheticSpec) -> Result<Dataset> {
    synth_mixture(spec, &mut ChaCha8Rng::seed_from_u64(spec.seed))
}

/// A labeled training sample; `class` indexes into [`OcdSplit::known_labels`].
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSample {
    pub source: usize,
    pub x: Vec<f64>,
    pub class: usize,
}

/// A query item with its withheld ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryItem {
    pub id: usize,
    pub source: usize,
    pub x: Vec<f64>,
    pub label: usize,
    pub is_old: bool,
}

/// Labeled support set of known classes and the shuffled query stream.
#[derive(Debug, Clone, PartialEq)]
pub struct OcdSplit {
    pub dim: usize,
    pub known_labels: Vec<usize>,
    pub novel_labels: Vec<usize>,
    pub support: Vec<SupportSample>,
    pub query: Vec<QueryItem>,
    pub train_fraction: f64,
    pub seed: u64,
}

impl OcdSplit {
    pub fn k_known(&self) -> usize {
        self.known_labels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.known_labels.len() + self.novel_labels.len()
    }

    pub fn support_inputs(&self) -> Vec<Vec<f64>> {
        self.support.iter().map(|s| s.x.clone()).collect()
    }

    pub fn support_classes(&self) -> Vec<usize> {
        self.support.iter().map(|s| s.class).collect()
    }

    pub fn old_classes(&self) -> BTreeSet<usize> {
        self.known_labels.iter().copied().collect()
    }
}

/// The `k_known` smallest labels are the seen classes. Each contributes
/// `round(train_fraction · n_c)` (clamped to `1..n_c − 1`) randomly chosen
/// samples to the support set; the rest, plus every novel-class sample, form
/// the query stream, shuffled once.
pub fn make_split(dataset: &Dataset, k_known: usize, train_fraction: f64, seed: u64) -> Result<OcdSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(LtcError::InvalidConfig("train_fraction must lie in (0, 1)"));
    }
    let classes = dataset.classes();
    if k_known == 0 || k_known >= classes.len() {
        return Err(LtcError::InvalidConfig(
            "k_known must be positive and below the class count",
        ));
    }
    let known_labels = classes[..k_known].to_vec();
    let novel_labels = classes[k_known..].to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut support = Vec::new();
    let mut query_sources = Vec::new();
    for (class, &label) in known_labels.iter().enumerate() {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.labels[i] == label)
            .collect();
        let n = members.len();
        if n < 2 {
            return Err(LtcError::EmptyClass(label));
        }
        members.shuffle(&mut rng);
        let take = (libm::round(train_fraction * n as f64) as usize).clamp(1, n - 1);
        let (train, rest) = members.split_at(take);
        let mut train = train.to_vec();
        train.sort_unstable();
        support.extend(train.into_iter().map(|i| SupportSample {
            source: i,
            x: dataset.samples[i].clone(),
            class,
        }));
        query_sources.extend_from_slice(rest);
    }
    query_sources.extend((0..dataset.len()).filter(|&i| novel_labels.contains(&dataset.labels[i])));
    query_sources.sort_unstable();
    query_sources.shuffle(&mut rng);

    let query = query_sources
        .into_iter()
        .enumerate()
        .map(|(id, i)| QueryItem {
            id,
            source: i,
            x: dataset.samples[i].clone(),
            label: dataset.labels[i],
            is_old: known_labels.contains(&dataset.labels[i]),
        })
        .collect();
    Ok(OcdSplit {
        dim: dataset.dim,
        known_labels,
        novel_labels,
        support,
        query,
        train_fraction,
        seed,
    })
}

/// What a streaming consumer gets to see: no label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamItem<'a> {
    pub id: usize,
    pub x: &'a [f64],
}

/// Query items in their fixed order with labels withheld.
pub fn stream_iter(split: &OcdSplit) -> impl ExactSizeIterator<Item = StreamItem<'_>> + '_ {
    split.query.iter().map(|q| StreamItem { id: q.id, x: &q.x })
}

/// Augmented view: `x` plus Gaussian noise of standard deviation `scale`.
pub fn augment_view<R: Rng + ?Sized>(x: &[f64], scale: f64, rng: &mut R) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let n: f64 = StandardNormal.sample(rng);
            v + scale * n
        })
        .collect()
}
