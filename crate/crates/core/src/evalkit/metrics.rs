//! Clustering accuracy of a completed stream.
//!
//! Strict: one-to-one matching between predicted categories and true classes
//! that maximizes the number of correctly matched items (Hungarian on the
//! contingency table). Greedy: every predicted category maps to its majority
//! true class, ties going to the smaller label. Old/New accuracies use the
//! global mapping restricted to items whose ground truth is old/new.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use super::hungarian::hungarian;
use crate::error::{LtcError, Result};

/// Ground truth and predictions for one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamResult {
    pub truth: Vec<usize>,
    pub predictions: Vec<usize>,
    pub old_classes: BTreeSet<usize>,
    /// True class count `C` of the query label space.
    pub num_classes: usize,
}

impl StreamResult {
    pub fn new(
        truth: Vec<usize>,
        predictions: Vec<usize>,
        old_classes: BTreeSet<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if truth.len() != predictions.len() {
            return Err(LtcError::ShapeMismatch("truth/predictions"));
        }
        Ok(Self {
            truth,
            predictions,
            old_classes,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AccuracySplit {
    pub all: f64,
    pub old: f64,
    pub new: f64,
}

/// Predicted category → true class.
pub type CategoryMap = BTreeMap<usize, usize>;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub strict: AccuracySplit,
    pub greedy: AccuracySplit,
    pub num_items: usize,
    pub num_predicted_categories: usize,
    pub num_true_classes: usize,
    pub category_count_error: usize,
    pub strict_assignment: CategoryMap,
    pub greedy_assignment: CategoryMap,
}

/// Contingency table with predicted categories indexed by first appearance,
/// which makes everything downstream independent of the prediction ids.
struct Contingency {
    categories: Vec<usize>,
    classes: Vec<usize>,
    counts: Vec<Vec<usize>>,
}

impl Contingency {
    fn build(result: &StreamResult) -> Result<Self> {
        if result.is_empty() {
            return Err(LtcError::Empty("stream result"));
        }
        let mut categories = Vec::new();
        let mut cat_index = BTreeMap::new();
        for &p in &result.predictions {
            cat_index.entry(p).or_insert_with(|| {
                categories.push(p);
                categories.len() - 1
            });
        }
        let classes: Vec<usize> = result
            .truth
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let class_index: BTreeMap<usize, usize> =
            classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let mut counts = vec![vec![0usize; classes.len()]; categories.len()];
        for (&p, &t) in result.predictions.iter().zip(&result.truth) {
            counts[cat_index[&p]][class_index[&t]] += 1;
        }
        Ok(Self {
            categories,
            classes,
            counts,
        })
    }
}

fn score(result: &StreamResult, mapping: &CategoryMap) -> AccuracySplit {
    let (mut hit_old, mut n_old, mut hit_new, mut n_new) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in result.predictions.iter().zip(&result.truth) {
        let hit = mapping.get(&p) == Some(&t);
        if result.old_classes.contains(&t) {
            n_old += 1;
            hit_old += hit as usize;
        } else {
            n_new += 1;
            hit_new += hit as usize;
        }
    }
    let frac = |h: usize, n: usize| if n == 0 { 0.0 } else { h as f64 / n as f64 };
    AccuracySplit {
        all: frac(hit_old + hit_new, n_old + n_new),
        old: frac(hit_old, n_old),
        new: frac(hit_new, n_new),
    }
}

/// One-to-one optimal matching accuracy.
pub fn strict_acc(result: &StreamResult) -> Result<(AccuracySplit, CategoryMap)> {
    let table = Contingency::build(result)?;
    let cost: Vec<Vec<f64>> = table
        .counts
        .iter()
        .map(|row| row.iter().map(|&c| -(c as f64)).collect())
        .collect();
    let assignment = hungarian(&cost)?;
    let mapping: CategoryMap = assignment
        .pairs()
        .map(|(r, c)| (table.categories[r], table.classes[c]))
        .collect();
    Ok((score(result, &mapping), mapping))
}

/// Majority-vote (many-to-one) mapping accuracy.
pub fn greedy_acc(result: &StreamResult) -> Result<(AccuracySplit, CategoryMap)> {
    let table = Contingency::build(result)?;
    let mapping: CategoryMap = table
        .counts
        .iter()
        .enumerate()
        .map(|(r, row)| {
            let mut best = 0;
            for (c, &n) in row.iter().enumerate() {
                if n > row[best] {
                    best = c;
                }
            }
            (table.categories[r], table.classes[best])
        })
        .collect();
    Ok((score(result, &mapping), mapping))
}

/// Number of distinct predicted categories and its distance to `C`.
pub fn count_error(result: &StreamResult) -> (usize, usize) {
    let predicted = result.predictions.iter().collect::<BTreeSet<_>>().len();
    (predicted, predicted.abs_diff(result.num_classes))
}

pub fn evaluate(result: &StreamResult) -> Result<EvalReport> {
    let (strict, strict_assignment) = strict_acc(result)?;
    let (greedy, greedy_assignment) = greedy_acc(result)?;
    let (num_predicted_categories, category_count_error) = count_error(result);
    Ok(EvalReport {
        strict,
        greedy,
        num_items: result.len(),
        num_predicted_categories,
        num_true_classes: result.num_classes,
        category_count_error,
        strict_assignment,
        greedy_assignment,
    })
}
