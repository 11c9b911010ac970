//! Forward values and gradients against hand-written computations.

use intentrec::numerics::{
    evaluate_with_gradients, grad_check, gru_step, mlp_forward, Activation, GradCheckOptions, GruSpec, MlpSpec,
    ParameterSet, Tensor,
};

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// 2 → 3 (ReLU) → 1 network with fixed weights.
fn small_mlp() -> (MlpSpec, ParameterSet) {
    let spec = MlpSpec::new(vec![2, 3, 1], Activation::Relu);
    let mut p = ParameterSet::new();
    p.insert("layer0.weight", Tensor::from_rows(&[[0.5, -1.0, 0.25], [1.5, 0.75, -0.5]]).unwrap()).unwrap();
    p.insert("layer0.bias", Tensor::vector(vec![0.1, 0.2, -0.3])).unwrap();
    p.insert("layer1.weight", Tensor::from_rows(&[[2.0], [-1.0], [0.5]]).unwrap()).unwrap();
    p.insert("layer1.bias", Tensor::vector(vec![0.05])).unwrap();
    (spec, p)
}

#[test]
fn mlp_matches_hand_forward_and_backward() {
    let (spec, mut p) = small_mlp();
    let x = [0.4, -0.2];
    // hidden pre-activations
    let a = [0.4 * 0.5 + -0.2 * 1.5 + 0.1, -0.4 + -0.2 * 0.75 + 0.2, 0.4 * 0.25 + -0.2 * -0.5 - 0.3];
    let h: Vec<f64> = a.iter().map(|v: &f64| v.max(0.0)).collect();
    let out = 2.0 * h[0] - h[1] + 0.5 * h[2] + 0.05;
    let got = mlp_forward(&p, &Tensor::vector(x.to_vec()), &spec).unwrap();
    assert!((got.data()[0] - out).abs() < 1e-15);

    // loss = out², so dL/dout = 2·out
    let loss = evaluate_with_gradients(&mut [&mut p], |g, b| {
        let xin = g.constant(Tensor::matrix(1, 2, x.to_vec()).unwrap());
        let o = spec.forward(&b[0], xin, "mlp")?;
        o.mul(o).map(|v| v.sum())
    })
    .unwrap();
    assert!((loss - out * out).abs() < 1e-15);
    let d_out = 2.0 * out;
    let w1 = [2.0, -1.0, 0.5];
    let b1 = p.grad("layer1.bias").unwrap().data()[0];
    assert!((b1 - d_out).abs() < 1e-14);
    for j in 0..3 {
        let gw1 = p.grad("layer1.weight").unwrap().get(j, 0);
        assert!((gw1 - d_out * h[j]).abs() < 1e-14);
        let d_a = if a[j] > 0.0 { d_out * w1[j] } else { 0.0 };
        assert!((p.grad("layer0.bias").unwrap().data()[j] - d_a).abs() < 1e-14);
        for (i, xi) in x.iter().enumerate() {
            assert!((p.grad("layer0.weight").unwrap().get(i, j) - d_a * xi).abs() < 1e-14);
        }
    }
}

#[test]
fn scalar_gru_matches_the_update_equations() {
    let mut p = ParameterSet::new();
    let vals = [("u", 0.7, -0.4, 0.1), ("r", -0.3, 0.9, -0.2), ("c", 1.1, 0.6, 0.05)];
    for (gate, w, u, b) in vals {
        p.insert(format!("w_{gate}"), Tensor::matrix(1, 1, vec![w]).unwrap()).unwrap();
        p.insert(format!("u_{gate}"), Tensor::matrix(1, 1, vec![u]).unwrap()).unwrap();
        p.insert(format!("b_{gate}"), Tensor::vector(vec![b])).unwrap();
    }
    let xs = [0.5, -1.0, 2.0, 0.0, -0.3];
    let mut h_lib = Tensor::vector(vec![0.0]);
    let mut h = 0.0f64;
    for &x in &xs {
        let u = sigmoid(0.7 * x - 0.4 * h + 0.1);
        let r = sigmoid(-0.3 * x + 0.9 * h - 0.2);
        let c = (1.1 * x + 0.6 * (r * h) + 0.05).tanh();
        h = (1.0 - u) * h + u * c;
        h_lib = gru_step(&p, &h_lib, &Tensor::vector(vec![x])).unwrap();
        assert!((h_lib.data()[0] - h).abs() < 1e-15, "{} vs {h}", h_lib.data()[0]);
    }
}

#[test]
fn unrolled_gru_gradients_match_finite_differences() {
    use rand::SeedableRng;
    let spec = GruSpec { input: 3, hidden: 4 };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let mut p = spec.init_params(intentrec::numerics::WeightInit::Uniform(0.8), &mut rng).unwrap();
    let xs: Vec<Tensor> = (0..4)
        .map(|t| Tensor::matrix(2, 3, (0..6).map(|i| ((t * 6 + i) as f64 * 0.37).sin()).collect()).unwrap())
        .collect();
    let report = grad_check(&mut [&mut p], GradCheckOptions::default(), |g, b| {
        let mut h = g.constant(Tensor::zeros(&[2, 4]));
        for x in &xs {
            h = spec.step(&b[0], h, g.constant(x.clone()))?;
        }
        h.mul(h).map(|v| v.sum())
    })
    .unwrap();
    assert_eq!(report.tensors.len(), 9);
    assert!(report.max_relative_error() < 1e-5, "{report:?}");
}

#[test]
fn softmax_cross_entropy_gradient_is_probabilities_minus_one_hot() {
    let logits = [0.3, -1.2, 2.0, 0.0];
    let label = 2;
    let mut p = ParameterSet::new();
    p.insert("logits", Tensor::matrix(1, 4, logits.to_vec()).unwrap()).unwrap();
    evaluate_with_gradients(&mut [&mut p], |_, b| {
        Ok(b[0].get("logits")?.log_softmax_pick(&[label])?.sum().scale(-1.0))
    })
    .unwrap();
    let z: f64 = logits.iter().map(|v| v.exp()).sum();
    for (i, &l) in logits.iter().enumerate() {
        let expected = l.exp() / z - if i == label { 1.0 } else { 0.0 };
        assert!((p.grad("logits").unwrap().data()[i] - expected).abs() < 1e-15);
    }
}
