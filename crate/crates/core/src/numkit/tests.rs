use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

/// Central-difference oracle: only ever evaluates the forward pass.
fn max_rel_error(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    g.backward(out).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| g.grad(*v).map_or(vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();

    let eval = |ts: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars);
        g.scalar_value(out)
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic[i][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn matmul_identity_and_hand_product() {
    let mut g = Graph::new();
    let i2 = g.constant(Tensor::eye(2));
    let b = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let c = g.matmul(i2, b).unwrap();
    assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);

    let r = g.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
    let col = g.constant(Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
    let p = g.matmul(r, col).unwrap();
    assert_eq!(g.value(p).data(), &[11.0]);
}

#[test]
fn matmul_rejects_mismatched_inner_dims() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(g.matmul(a, b), Err(NumError::Shape { .. })));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = [random(&[3, 3], &mut rng), random(&[3, 3], &mut rng)];
    let err = max_rel_error(&inputs, |g, v| {
        let c = g.matmul(v[0], v[1]).unwrap();
        g.sum(c).unwrap()
    });
    assert!(err < 1e-6, "rel err {err}");
}

#[test]
fn sigmoid_symmetry_and_derivative() {
    assert_eq!(sigmoid(0.0), 0.5);
    for x in [-30.0, -2.5, -0.1, 0.3, 4.0, 40.0] {
        assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
    }
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(0.0));
    let y = g.sigmoid(x).unwrap();
    g.backward(y).unwrap();
    assert!((g.grad(x).unwrap()[0] - 0.25).abs() < 1e-15);
    let h = 1e-6;
    let fd = (sigmoid(h) - sigmoid(-h)) / (2.0 * h);
    assert!((fd - 0.25).abs() < 1e-9);
}

#[test]
fn log_domain_is_checked() {
    let mut g = Graph::checked();
    let x = g.constant(Tensor::new(vec![2], vec![1.0, 0.0]).unwrap());
    assert!(matches!(g.log(x), Err(NumError::Domain { .. })));
    // Unchecked mode computes -inf without complaint.
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![2], vec![1.0, 0.0]).unwrap());
    let y = g.log(x).unwrap();
    assert_eq!(g.value(y).data()[1], f64::NEG_INFINITY);
}

#[test]
fn checked_tensors_reject_nan() {
    assert!(Tensor::checked(vec![2], vec![1.0, f64::NAN]).is_err());
    assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    let mut g = Graph::checked();
    assert!(g.input(Tensor::scalar(f64::INFINITY), false).is_err());
}

#[test]
fn elementwise_scalar_broadcast() {
    let mut g = Graph::new();
    let a = g.param(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
    let s = g.param(Tensor::scalar(2.0));
    let p = g.mul(a, s).unwrap();
    assert_eq!(g.value(p).data(), &[2.0, 4.0, 6.0]);
    let l = g.sum(p).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(s).unwrap(), &[6.0]);
    assert_eq!(g.grad(a).unwrap(), &[2.0, 2.0, 2.0]);
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap());
    let y = g.softmax_lastdim(x, None).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, 0.5]);

    let x = g.constant(Tensor::new(vec![1, 2], vec![1000.0, 0.0]).unwrap());
    let y = g.softmax_lastdim(x, None).unwrap();
    let v = g.value(y).data();
    assert!(v.iter().all(|p| p.is_finite()));
    assert!((v[0] - 1.0).abs() < 1e-15 && v[1] < 1e-300);
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = Graph::new();
    let x = g.constant(random(&[4, 8], &mut rng));
    let y = g.softmax_lastdim(x, None).unwrap();
    let t = g.value(y);
    for r in 0..4 {
        let s: f64 = t.row(r).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn masked_softmax_and_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mask: Arc<[bool]> = (0..12).map(|i| i % 4 <= i / 4).collect::<Vec<_>>().into();
    let weights = random(&[3, 4], &mut rng);
    let inputs = [random(&[3, 4], &mut rng)];
    let err = max_rel_error(&inputs, |g, v| {
        let y = g.softmax_lastdim(v[0], Some(mask.clone())).unwrap();
        let w = g.constant(weights.clone());
        let p = g.mul(y, w).unwrap();
        g.sum(p).unwrap()
    });
    assert!(err < 1e-6, "rel err {err}");
}

#[test]
fn layer_norm_constant_row_maps_to_bias() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![1, 3], vec![4.0, 4.0, 4.0]).unwrap());
    let gain = g.constant(Tensor::full(&[3], 1.0));
    let bias = g.constant(Tensor::zeros(&[3]));
    let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn layer_norm_moments_and_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut g = Graph::new();
    let x = g.constant(random(&[5, 16], &mut rng));
    let gain = g.constant(Tensor::full(&[16], 1.0));
    let bias = g.constant(Tensor::zeros(&[16]));
    let y = g.layer_norm(x, gain, bias, 0.0).unwrap();
    for r in 0..5 {
        let row = g.value(y).row(r);
        let mean = row.iter().sum::<f64>() / 16.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-6);
    }

    let weights = random(&[4, 6], &mut rng);
    let inputs = [random(&[4, 6], &mut rng), random(&[6], &mut rng), random(&[6], &mut rng)];
    let err = max_rel_error(&inputs, |g, v| {
        let y = g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
        let w = g.constant(weights.clone());
        let p = g.mul(y, w).unwrap();
        g.sum(p).unwrap()
    });
    assert!(err < 1e-5, "rel err {err}");
}

#[test]
fn dropout_mask_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    assert!(dropout_mask(&[4], 1.0, &mut rng).is_err());
    assert!(dropout_mask(&[4], -0.1, &mut rng).is_err());
    assert_eq!(dropout_mask(&[2, 3], 0.0, &mut rng).unwrap(), Tensor::full(&[2, 3], 1.0));
    let m = dropout_mask(&[100_000], 0.1, &mut rng).unwrap();
    let mean = m.data().iter().sum::<f64>() / 1e5;
    assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
}

#[test]
fn backward_linear_and_quadratic() {
    let mut g = Graph::new();
    let th = g.param(Tensor::new(vec![3], vec![0.3, -2.0, 5.0]).unwrap());
    let l = g.sum(th).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(th).unwrap(), &[1.0, 1.0, 1.0]);

    let mut g = Graph::new();
    let th = g.param(Tensor::scalar(3.0));
    let sq = g.mul(th, th).unwrap();
    g.backward(sq).unwrap();
    assert_eq!(g.grad(th).unwrap(), &[6.0]);
    // A second call accumulates into leaf gradients.
    g.backward(sq).unwrap();
    assert_eq!(g.grad(th).unwrap(), &[12.0]);
    g.zero_grad();
    assert!(g.grad(th).is_none());
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::new();
    let th = g.param(Tensor::zeros(&[2]));
    assert!(matches!(g.backward(th), Err(NumError::Usage(_))));
}

#[test]
fn attention_matches_unfused_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (q, k, v) = (random(&[5, 4], &mut rng), random(&[5, 4], &mut rng), random(&[5, 3], &mut rng));
    let valid: Arc<[bool]> = vec![true, true, true, false, true].into();
    for causal in [false, true] {
        let mask = AttentionMask { causal, key_valid: Some(valid.clone()) };
        let mut g = Graph::new();
        let (qv, kv, vv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
        let fused = g.attention(qv, kv, vv, 0.5, mask).unwrap();

        let scores = g.matmul_nt(qv, kv).unwrap();
        let scores = g.scale(scores, 0.5).unwrap();
        let keep: Arc<[bool]> =
            (0..25).map(|idx| (!causal || idx % 5 <= idx / 5) && valid[idx % 5]).collect::<Vec<_>>().into();
        let p = g.softmax_lastdim(scores, Some(keep)).unwrap();
        let reference = g.matmul(p, vv).unwrap();
        for (a, b) in g.value(fused).data().iter().zip(g.value(reference).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let weights = random(&[6, 3], &mut rng);
    let inputs = [random(&[6, 4], &mut rng), random(&[6, 4], &mut rng), random(&[6, 3], &mut rng)];
    for causal in [false, true] {
        let err = max_rel_error(&inputs, |g, v| {
            let mask = AttentionMask { causal, key_valid: Some(vec![true, true, false, true, true, true].into()) };
            let o = g.attention(v[0], v[1], v[2], 0.7, mask).unwrap();
            let w = g.constant(weights.clone());
            let p = g.mul(o, w).unwrap();
            g.sum(p).unwrap()
        });
        assert!(err < 1e-6, "causal={causal} rel err {err}");
    }
}

#[test]
fn composite_ops_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inputs = [
        random(&[4, 3], &mut rng),
        random(&[3, 5], &mut rng),
        random(&[5], &mut rng),
        Tensor::scalar(0.4),
        random(&[4, 2], &mut rng),
    ];
    let mask: Arc<[f64]> = (0..20).map(|i| if i % 3 == 0 { 0.0 } else { 1.25 }).collect::<Vec<_>>().into();
    for act in [Unary::Gelu, Unary::Tanh, Unary::Sigmoid, Unary::Exp] {
        let mask = mask.clone();
        let err = max_rel_error(&inputs, move |g, v| {
            let h = g.matmul(v[0], v[1]).unwrap();
            let h = g.add_row(h, v[2]).unwrap();
            let h = g.unary(h, act).unwrap();
            let h = g.mask_mul(h, mask.clone()).unwrap();
            let h = g.scale_by(h, v[3]).unwrap();
            let c = g.concat_cols(&[h, v[4]]).unwrap();
            let s = g.slice_cols(c, 2, 4).unwrap();
            let s = g.add_scalar(s, 3.0).unwrap();
            let l = g.log(s).unwrap();
            let d = g.sub(l, v[3]).unwrap();
            let d = g.scale(d, -0.5).unwrap();
            g.sum(d).unwrap()
        });
        assert!(err < 1e-6, "{act:?}: rel err {err}");
    }
}

#[test]
fn survival_nll_gradient_and_clamp() {
    let coef: Arc<[f64]> = vec![0.2, 0.3, 0.5].into();
    let inputs = [Tensor::new(vec![4], vec![0.9, 0.7, 0.8, 0.3]).unwrap()];
    let err = max_rel_error(&inputs, |g, v| g.survival_nll(v[0], coef.clone(), 3, 1.5, 1e-7).unwrap());
    assert!(err < 1e-6);

    // Saturated probabilities are clamped and contribute no gradient.
    let mut g = Graph::new();
    let s = g.param(Tensor::new(vec![2], vec![1.0, 0.5]).unwrap());
    let l = g.survival_nll(s, vec![1.0].into(), 1, 1.0, 1e-7).unwrap();
    assert!((g.scalar_value(l) - (-(1.0 - 1e-7f64).ln() - 0.5f64.ln())).abs() < 1e-15);
    g.backward(l).unwrap();
    assert_eq!(g.grad(s).unwrap()[0], 0.0);
}

#[test]
fn identical_seeds_give_identical_masks() {
    let a = dropout_mask(&[64], 0.3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = dropout_mask(&[64], 0.3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
}
