use std::collections::BTreeSet;

use ltc_core::evalkit::{evaluate, greedy_acc, hungarian, strict_acc, StreamResult};
use ltc_core::losses::{ce_loss, max_margin_loss, sup_con_loss};
use ltc_core::math;
use ltc_core::protodict::{percentile, PrototypeStore, QuantileTargets, ThresholdConfig, ThresholdState};
use proptest::prelude::*;

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = math::norm(&v).max(1e-9);
    v.into_iter().map(|x| x / n).collect()
}

fn features(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d), n)
        .prop_filter("non-zero rows", |rows| rows.iter().all(|r| math::norm(r) > 1e-3))
        .prop_map(|rows| rows.into_iter().map(unit).collect())
}

// Random orthogonal matrix from Gram-Schmidt on a random square.
fn orthogonal(raw: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    for v in raw {
        let mut w = v.clone();
        for u in &q {
            let c = math::dot(&w, u);
            math::axpy(-c, u, &mut w);
        }
        q.push(unit(w));
    }
    q
}

// Every label appears at least twice, as with two views per sample.
fn paired(half: &[usize]) -> Vec<usize> {
    half.iter().chain(half).copied().collect()
}

fn rotate(q: &[Vec<f64>], f: &[f64]) -> Vec<f64> {
    q.iter().map(|row| math::dot(row, f)).collect()
}

proptest! {
    #[test]
    fn supcon_ignores_batch_order(
        f in features(8, 4),
        half in prop::collection::vec(0usize..3, 4),
        shift in 1usize..8,
    ) {
        let labels = paired(&half);
        let base = sup_con_loss(&f, &labels, 0.07).unwrap().value;
        let perm: Vec<usize> = (0..8).map(|i| (i * 3 + shift) % 8).collect();
        let pf: Vec<_> = perm.iter().map(|&i| f[i].clone()).collect();
        let pl: Vec<_> = perm.iter().map(|&i| labels[i]).collect();
        let permuted = sup_con_loss(&pf, &pl, 0.07).unwrap().value;
        prop_assert!((base - permuted).abs() < 1e-10);
    }

    #[test]
    fn supcon_ignores_rotation(
        f in features(6, 4),
        half in prop::collection::vec(0usize..2, 3),
        raw in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 4),
    ) {
        let q = orthogonal(&raw);
        prop_assume!(q.iter().all(|r| r.iter().all(|x| x.is_finite())));
        let labels = paired(&half);
        let base = sup_con_loss(&f, &labels, 0.07).unwrap().value;
        let rf: Vec<_> = f.iter().map(|x| rotate(&q, x)).collect();
        let rotated = sup_con_loss(&rf, &labels, 0.07).unwrap().value;
        prop_assert!((base - rotated).abs() < 1e-10);
    }

    #[test]
    fn ce_gradient_rows_sum_to_zero(
        logits in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 1..6),
        seed in 0usize..4,
    ) {
        let labels: Vec<usize> = (0..logits.len()).map(|i| (i + seed) % 4).collect();
        let out = ce_loss(&logits, &labels).unwrap();
        prop_assert!(out.value >= 0.0);
        for g in &out.grads {
            prop_assert!(g.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn margin_is_nonnegative_and_monotone(
        known in prop::collection::vec(-1.0f64..1.0, 1..10),
        pseudo in prop::collection::vec(-1.0f64..1.0, 0..10),
        tau in -1.0f64..1.0,
        bump in 0.0f64..0.5,
    ) {
        let base = max_margin_loss(&known, &pseudo, tau, 0.05, 0.05).unwrap();
        prop_assert!(base.pos >= 0.0 && base.neg >= 0.0);
        // raising known scores cannot raise L_pos, raising pseudo scores cannot lower L_neg
        let up_known: Vec<f64> = known.iter().map(|s| s + bump).collect();
        let up_pseudo: Vec<f64> = pseudo.iter().map(|s| s + bump).collect();
        let moved = max_margin_loss(&up_known, &up_pseudo, tau, 0.05, 0.05).unwrap();
        prop_assert!(moved.pos <= base.pos + 1e-15);
        prop_assert!(moved.neg + 1e-15 >= base.neg);
    }

    #[test]
    fn ema_moves_toward_target_and_stays_bracketed(
        tau0 in -1.0f64..1.0,
        target in -1.0f64..1.0,
        beta in 0.0f64..1.0,
        steps in 1usize..20,
    ) {
        let cfg = ThresholdConfig { tau_init: tau0, beta, ..ThresholdConfig::default() };
        let mut state = ThresholdState::new(cfg);
        let mut prev = tau0;
        for _ in 0..steps {
            let t = state.ema_update(QuantileTargets { u_pos: target, u_neg: target, tau_target: target });
            let lo = tau0.min(target) - 1e-12;
            let hi = tau0.max(target) + 1e-12;
            prop_assert!(t >= lo && t <= hi);
            prop_assert!((t - target).abs() <= (prev - target).abs() + 1e-12);
            prev = t;
        }
    }

    #[test]
    fn percentile_stays_within_range(
        scores in prop::collection::vec(-1.0f64..1.0, 1..30),
        q in 0.0f64..1.0,
    ) {
        let p = percentile(&scores, q).unwrap();
        let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
    }

    #[test]
    fn streaming_is_append_only(
        stream in features(25, 3),
        tau in -1.0f64..1.0,
    ) {
        let known = vec![unit(vec![1.0, 0.0, 0.0]), unit(vec![0.0, 1.0, 0.0])];
        let mut store = PrototypeStore::from_prototypes(known.clone(), 2).unwrap();
        let mut seen = Vec::new();
        for (t, f) in stream.iter().enumerate() {
            let before = store.len();
            let a = store.assign_or_spawn(f, tau).unwrap();
            prop_assert!(store.len() == before || store.len() == before + 1);
            prop_assert_eq!(a.spawned, store.len() == before + 1);
            prop_assert!(store.len() <= 2 + t + 1);
            // earlier prototypes are never touched
            prop_assert_eq!(&store.prototypes()[..2], &known[..]);
            for (i, p) in seen.iter().enumerate() {
                prop_assert_eq!(&store.prototypes()[2 + i], p);
            }
            if a.spawned {
                seen.push(store.prototypes()[a.index].clone());
            }
        }
    }

    #[test]
    fn greedy_never_below_strict(
        truth in prop::collection::vec(0usize..6, 1..60),
        preds in prop::collection::vec(0usize..9, 60),
    ) {
        let preds = preds[..truth.len()].to_vec();
        let old: BTreeSet<usize> = (0..3).collect();
        let r = StreamResult::new(truth, preds, old, 6).unwrap();
        let (s, _) = strict_acc(&r).unwrap();
        let (g, _) = greedy_acc(&r).unwrap();
        prop_assert!(g.all + 1e-12 >= s.all);
    }

    #[test]
    fn metrics_ignore_category_ids(
        truth in prop::collection::vec(0usize..5, 1..50),
        preds in prop::collection::vec(0usize..7, 50),
        offset in 1usize..100,
    ) {
        let preds = preds[..truth.len()].to_vec();
        let old: BTreeSet<usize> = (0..2).collect();
        let relabeled: Vec<usize> = preds.iter().map(|p| (p * 7919 + offset) % 100_003).collect();
        let a = evaluate(&StreamResult::new(truth.clone(), preds, old.clone(), 5).unwrap()).unwrap();
        let b = evaluate(&StreamResult::new(truth, relabeled, old, 5).unwrap()).unwrap();
        prop_assert_eq!(a.strict.all, b.strict.all);
        prop_assert_eq!(a.greedy.all, b.greedy.all);
        prop_assert_eq!(a.num_predicted_categories, b.num_predicted_categories);
    }

    #[test]
    fn acc_all_is_weighted_old_new(
        truth in prop::collection::vec(0usize..6, 1..60),
        preds in prop::collection::vec(0usize..8, 60),
    ) {
        let preds = preds[..truth.len()].to_vec();
        let old: BTreeSet<usize> = (0..3).collect();
        let n_old = truth.iter().filter(|y| old.contains(y)).count() as f64;
        let n = truth.len() as f64;
        let r = StreamResult::new(truth, preds, old, 6).unwrap();
        for (acc, _) in [strict_acc(&r).unwrap(), greedy_acc(&r).unwrap()] {
            let mixed = (n_old * acc.old + (n - n_old) * acc.new) / n;
            prop_assert!((acc.all - mixed).abs() < 1e-12);
        }
    }

    #[test]
    fn hungarian_matches_brute_force(
        rows in 1usize..6,
        cols in 1usize..6,
        vals in prop::collection::vec(0u32..20, 36),
    ) {
        let cost: Vec<Vec<f64>> = (0..rows)
            .map(|i| (0..cols).map(|j| vals[i * 6 + j] as f64).collect())
            .collect();
        let got = hungarian(&cost).unwrap().cost;
        prop_assert_eq!(got, brute_force(&cost));
    }
}

// Minimum over injections of the smaller side into the larger.
fn brute_force(cost: &[Vec<f64>]) -> f64 {
    let rows = cost.len();
    let cols = cost[0].len();
    fn go(cost: &[Vec<f64>], r: usize, used: &mut Vec<bool>, transpose: bool) -> f64 {
        let (n_small, n_big) = if transpose {
            (cost[0].len(), cost.len())
        } else {
            (cost.len(), cost[0].len())
        };
        if r == n_small {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for c in 0..n_big {
            if !used[c] {
                used[c] = true;
                let v = if transpose { cost[c][r] } else { cost[r][c] };
                best = best.min(v + go(cost, r + 1, used, transpose));
                used[c] = false;
            }
        }
        best
    }
    if rows <= cols {
        go(cost, 0, &mut vec![false; cols], false)
    } else {
        go(cost, 0, &mut vec![false; rows], true)
    }
}

#[test]
fn pure_relabeling_scores_one_under_both_protocols() {
    let truth = vec![0, 1, 2, 3, 0, 1, 2, 3, 3];
    let preds: Vec<usize> = truth.iter().map(|y| 40 - 3 * y).collect();
    let r = StreamResult::new(truth, preds, (0..2).collect(), 4).unwrap();
    let rep = evaluate(&r).unwrap();
    assert_eq!(rep.strict.all, 1.0);
    assert_eq!(rep.greedy.all, 1.0);
    assert_eq!(rep.category_count_error, 0);
}
