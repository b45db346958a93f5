use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::LtcError;

fn identity_encoder(dim: usize, classes: usize) -> ModelParams {
    let enc = Linear::new(DenseMatrix::identity(dim), vec![0.0; dim]).unwrap();
    ModelParams::new(vec![enc], Linear::zeros(dim, classes)).unwrap()
}

fn random_net(seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ModelParams::init(&Architecture::mlp(5, 7, 4, 3), &mut rng).unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    use rand::Rng;
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn identity_encoder_normalizes_input() {
    let p = identity_encoder(2, 2);
    let t = p.forward(&[3.0, 4.0]).unwrap();
    assert!((t.feature[0] - 0.6).abs() < 1e-15);
    assert!((t.feature[1] - 0.8).abs() < 1e-15);
    assert_eq!(t.embedding(), &[3.0, 4.0]);
}

#[test]
fn zero_final_layer_is_degenerate() {
    let mut p = random_net(1);
    let last = p.encoder.len() - 1;
    p.encoder[last] = Linear::zeros(7, 4);
    assert!(matches!(
        p.forward(&[0.1, 0.2, 0.3, 0.4, 0.5]),
        Err(LtcError::DegenerateEmbedding(_))
    ));
}

#[test]
fn forward_rejects_wrong_input_dim() {
    let p = random_net(2);
    assert_eq!(
        p.forward(&[1.0, 2.0]),
        Err(LtcError::DimensionMismatch {
            expected: 5,
            actual: 2
        })
    );
}

#[test]
fn features_are_unit_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..20 {
        let p = random_net(seed);
        let x = random_vec(&mut rng, 5);
        let t = p.forward(&x).unwrap();
        assert!((crate::math::norm(&t.feature) - 1.0).abs() < 1e-9);
    }
}

#[test]
fn head_squared_error_gradient_is_analytic() {
    // L = |ℓ - t|², ℓ = W f + b  ⇒  ∂L/∂W = 2(ℓ - t) fᵀ
    let p = random_net(4);
    let t = p.forward(&[0.3, -0.2, 0.9, 0.1, -0.5]).unwrap();
    let target = [0.5, -1.0, 2.0];
    let resid: Vec<f64> = t.logits.iter().zip(&target).map(|(l, y)| l - y).collect();
    let gl: Vec<f64> = resid.iter().map(|r| 2.0 * r).collect();
    let grads = p.backprop_params(&t, &[0.0; 4], &gl).unwrap();
    for r in 0..3 {
        for c in 0..4 {
            let expected = 2.0 * resid[r] * t.feature[c];
            assert!((grads.head.weight.get(r, c) - expected).abs() < 1e-14);
        }
        assert!((grads.head.bias[r] - 2.0 * resid[r]).abs() < 1e-14);
    }
}

#[test]
fn zero_output_gradient_gives_zero_parameter_gradient() {
    let p = random_net(5);
    let t = p.forward(&[0.3, -0.2, 0.9, 0.1, -0.5]).unwrap();
    let grads = p.backprop_params(&t, &[0.0; 4], &[0.0; 3]).unwrap();
    assert!(grads.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
}

#[test]
fn backprop_rejects_wrong_gradient_shapes() {
    let p = random_net(5);
    let t = p.forward(&[0.3, -0.2, 0.9, 0.1, -0.5]).unwrap();
    assert!(p.backprop_params(&t, &[0.0; 3], &[0.0; 3]).is_err());
    assert!(p.backprop_params(&t, &[0.0; 4], &[0.0; 2]).is_err());
}

// Scalar test loss on the outputs: L = a·f + b·ℓ + ½|ℓ|²
fn probe_loss(p: &ModelParams, x: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let t = p.forward(x).unwrap();
    crate::math::dot(a, &t.feature)
        + crate::math::dot(b, &t.logits)
        + 0.5 * crate::math::dot(&t.logits, &t.logits)
}

fn probe_grads(t: &ForwardTrace, a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let gl = t.logits.iter().zip(b).map(|(l, bi)| l + bi).collect();
    (a.to_vec(), gl)
}

#[test]
fn parameter_gradients_match_central_differences() {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut p = random_net(6);
    let x = random_vec(&mut rng, 5);
    let a = random_vec(&mut rng, 4);
    let b = random_vec(&mut rng, 3);
    let t = p.forward(&x).unwrap();
    let (gf, gl) = probe_grads(&t, &a, &b);
    let grads = p.backprop_params(&t, &gf, &gl).unwrap();
    let analytic: Vec<f64> = grads.tensors().concat();

    let mut numeric = Vec::new();
    let n_tensors = p.tensors().len();
    for ti in 0..n_tensors {
        let len = p.tensors()[ti].len();
        for i in 0..len {
            let orig = p.tensors()[ti][i];
            p.tensors_mut()[ti][i] = orig + h;
            let up = probe_loss(&p, &x, &a, &b);
            p.tensors_mut()[ti][i] = orig - h;
            let down = probe_loss(&p, &x, &a, &b);
            p.tensors_mut()[ti][i] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
    }
    for (an, nu) in analytic.iter().zip(&numeric) {
        let rel = (an - nu).abs() / an.abs().max(nu.abs()).max(1e-6);
        assert!(rel < 1e-4, "analytic {an} numeric {nu}");
    }
}

#[test]
fn input_gradient_of_linear_logit() {
    // Unit input orthogonal to the head row: ∇ₓ ℓ_c equals that row.
    let mut p = identity_encoder(2, 2);
    p.head.weight = DenseMatrix::from_vec(2, 2, vec![0.0, 2.0, 1.0, 1.0]).unwrap();
    let out = p
        .grad_wrt_input(&[1.0, 0.0], |t| {
            Ok(ObjectiveValue {
                value: t.logits[0],
                grad_feature: vec![0.0; 2],
                grad_logits: vec![1.0, 0.0],
            })
        })
        .unwrap();
    assert_eq!(out.gradient, vec![0.0, 2.0]);
}

#[test]
fn constant_objective_has_zero_input_gradient() {
    let p = random_net(7);
    let before = p.clone();
    let out = p
        .grad_wrt_input(&[0.3, -0.2, 0.9, 0.1, -0.5], |_| {
            Ok(ObjectiveValue {
                value: 3.0,
                grad_feature: vec![0.0; 4],
                grad_logits: vec![0.0; 3],
            })
        })
        .unwrap();
    assert!(out.gradient.iter().all(|&g| g == 0.0));
    assert_eq!(p, before);
}

#[test]
fn input_gradient_matches_central_differences() {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let p = random_net(8);
    let x = random_vec(&mut rng, 5);
    let a = random_vec(&mut rng, 4);
    let b = random_vec(&mut rng, 3);
    let t = p.forward(&x).unwrap();
    let (gf, gl) = probe_grads(&t, &a, &b);
    let g = p.input_gradient(&t, &gf, &gl).unwrap();
    for i in 0..5 {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let nu = (probe_loss(&p, &xp, &a, &b) - probe_loss(&p, &xm, &a, &b)) / (2.0 * h);
        let rel = (g[i] - nu).abs() / g[i].abs().max(nu.abs()).max(1e-6);
        assert!(rel < 1e-4, "coord {i}: analytic {} numeric {nu}", g[i]);
    }
}

fn scalar_param(w: f64) -> ModelParams {
    let enc = Linear::new(DenseMatrix::from_vec(1, 1, vec![w]).unwrap(), vec![0.0]).unwrap();
    ModelParams::new(vec![enc], Linear::zeros(1, 1)).unwrap()
}

#[test]
fn adamw_zero_gradient_no_decay_is_identity() {
    let mut p = random_net(9);
    let before = p.clone();
    let cfg = AdamWConfig {
        weight_decay: 0.0,
        ..AdamWConfig::default()
    };
    let mut state = OptimizerState::new(&p, cfg);
    let grads = p.zeros_like();
    adamw_step(&mut p, &grads, &mut state).unwrap();
    assert_eq!(p, before);
    assert_eq!(state.step, 1);
}

#[test]
fn adamw_first_step_moves_by_learning_rate() {
    let mut p = scalar_param(1.0);
    let cfg = AdamWConfig {
        learning_rate: 0.1,
        weight_decay: 0.0,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };
    let mut state = OptimizerState::new(&p, cfg);
    let mut g = p.zeros_like();
    g.encoder[0].weight.set(0, 0, 1.0);
    adamw_step(&mut p, &g, &mut state).unwrap();
    // m̂ = 1, v̂ = 1 ⇒ w = 1 − 0.1 / (1 + 1e-8)
    let w = p.encoder[0].weight.get(0, 0);
    assert!((w - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    assert!((w - 0.9).abs() < 1e-8);
}

#[test]
fn adamw_decoupled_decay() {
    let mut p = scalar_param(2.0);
    let cfg = AdamWConfig {
        learning_rate: 0.1,
        weight_decay: 0.05,
        ..AdamWConfig::default()
    };
    let mut state = OptimizerState::new(&p, cfg);
    let g = p.zeros_like();
    adamw_step(&mut p, &g, &mut state).unwrap();
    assert!((p.encoder[0].weight.get(0, 0) - 2.0 * 0.995).abs() < 1e-15);
}

#[test]
fn adamw_rejects_non_finite_gradient() {
    let mut p = scalar_param(1.0);
    let mut state = OptimizerState::new(&p, AdamWConfig::default());
    let mut g = p.zeros_like();
    g.encoder[0].weight.set(0, 0, f64::INFINITY);
    assert_eq!(
        adamw_step(&mut p, &g, &mut state),
        Err(LtcError::NonFinite("gradient"))
    );
    assert_eq!(state.step, 0);
}

#[test]
fn seeded_init_is_bitwise_deterministic() {
    let a = random_net(42);
    let b = random_net(42);
    assert_eq!(a, b);
    let x = [0.1, 0.2, -0.3, 0.4, 0.5];
    assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
}
