use amod_core::gradcheck::{self, FD_STEP};
use amod_core::tapegrad::special::{digamma, log_gamma};
use amod_core::tapegrad::{Activation, Adam, AdamConfig, Tape, TapeError, Tensor};
use proptest::prelude::*;

fn t(rows: &[&[f64]]) -> Tensor<f64> {
    Tensor::from_rows(rows).unwrap()
}

#[test]
fn matmul_identity_and_scalar() {
    let mut tape = Tape::new();
    let i2 = tape.constant(Tensor::identity(2));
    let m = tape.constant(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let out = tape.matmul(i2, m).unwrap();
    assert_eq!(tape.value(out), tape.value(m));

    let a = tape.constant(t(&[&[2.0]]));
    let b = tape.constant(t(&[&[3.0]]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[6.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(2, 3));
    let b = tape.constant(Tensor::zeros(2, 3));
    let err = tape.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        TapeError::Dimension {
            op: "matmul",
            left: vec![2, 3],
            right: vec![2, 3]
        }
    );
}

#[test]
fn matmul_gradient_against_central_differences() {
    let mut rng = gradcheck::rng(11);
    let a = gradcheck::random_tensor(&mut rng, 4, 3, -1.0, 1.0);
    let b = gradcheck::random_tensor(&mut rng, 3, 2, -1.0, 1.0);
    let res = gradcheck::check("ops", "matmul", &[a, b], FD_STEP, |tape, v| {
        let c = tape.matmul(v[0], v[1])?;
        let s = tape.activation(c, Activation::Tanh)?;
        tape.sum(s)
    })
    .unwrap();
    assert!(res.max_rel_error < 1e-6, "{res:?}");
}

#[test]
fn activations_elementwise() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[&[-1.0, 0.0, 2.0]]));
    let r = tape.relu(x).unwrap();
    assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
    let y = tape.constant(t(&[&[-1.0]]));
    let l = tape.activation(y, Activation::LeakyRelu(0.2)).unwrap();
    assert!((tape.value(l).item() + 0.2).abs() < 1e-15);
}

#[test]
fn log_of_non_positive_is_domain_error() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[&[1.0, 0.0]]));
    assert!(matches!(
        tape.activation(x, Activation::Log),
        Err(TapeError::Domain { op: "log", .. })
    ));
}

#[test]
fn rectifier_derivative_at_zero_is_left_value() {
    for (act, expected) in [(Activation::Relu, 0.0), (Activation::LeakyRelu(0.2), 0.2)] {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[&[0.0]]));
        let y = tape.activation(x, act).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), expected);
    }
}

#[test]
fn sigmoid_gradient_matches_differences() {
    let mut rng = gradcheck::rng(5);
    let x = gradcheck::random_tensor(&mut rng, 3, 3, -4.0, 4.0);
    let res = gradcheck::check("ops", "sigmoid", &[x], FD_STEP, |tape, v| {
        let s = tape.sigmoid(v[0])?;
        tape.sum(s)
    })
    .unwrap();
    assert!(res.max_rel_error < 1e-6, "{res:?}");
}

#[test]
fn row_softmax_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[&[0.0, 0.0, 0.0]]));
    let y = tape.row_softmax(x, None).unwrap();
    for &v in tape.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = tape.constant(t(&[&[5.0]]));
    let y = tape.row_softmax(x, None).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0]);

    let x = tape.constant(t(&[&[1.0, 2.0, 3.0]]));
    let y = tape.row_softmax(x, None).unwrap();
    let z: f64 = [1f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
    for (k, &v) in tape.value(y).data().iter().enumerate() {
        assert!((v - ((k + 1) as f64).exp() / z).abs() < 1e-15);
    }
}

#[test]
fn fully_masked_row_is_rejected() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let mask = [true, false, false, false];
    assert_eq!(
        tape.row_softmax(x, Some(&mask)).unwrap_err(),
        TapeError::DegenerateRow { row: 1 }
    );
}

#[test]
fn sum_pool_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let y = tape.sum_pool(x).unwrap();
    assert_eq!(tape.value(y).data(), &[4.0, 6.0]);
    assert_eq!(tape.value(y).shape(), &[1, 2]);
    let row = tape.constant(t(&[&[7.0, -1.0]]));
    let y = tape.sum_pool(row).unwrap();
    assert_eq!(tape.value(y).data(), &[7.0, -1.0]);
    let empty = tape.constant(Tensor::zeros(0, 2));
    assert!(matches!(tape.sum_pool(empty), Err(TapeError::Dimension { .. })));
}

#[test]
fn backward_examples() {
    let mut tape = Tape::<f64>::new();
    let w = tape.param(t(&[&[1.0, -2.0], &[0.5, 3.0]]));
    let loss = tape.sum(w).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.wrt(w), Tensor::ones(2, 2));

    let mut tape = Tape::<f64>::new();
    let w = tape.param(Tensor::ones(2, 2));
    let x = tape.param(t(&[&[2.0]]));
    let loss = tape.sum(x).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.wrt(w), Tensor::zeros(2, 2));
    assert!(!g.is_reachable(w));

    let mat = tape.sum_pool(w).unwrap();
    assert!(matches!(
        tape.backward(mat),
        Err(TapeError::NonScalarLoss { .. })
    ));
}

#[test]
fn composite_gcn_layer_gradient() {
    let g = amod_core::graph::build_grid(2, 1.0).unwrap();
    let p = g.propagation::<f64>().unwrap().into_matrix();
    let mut rng = gradcheck::rng(3);
    let x = gradcheck::random_tensor(&mut rng, 4, 3, -1.0, 1.0);
    let w = gradcheck::random_tensor(&mut rng, 3, 5, -1.0, 1.0);
    let res = gradcheck::check("ops", "gcn composite", &[x, w], FD_STEP, |tape, v| {
        let pv = tape.constant(p.clone());
        let px = tape.matmul(pv, v[0])?;
        let h = tape.matmul(px, v[1])?;
        let r = tape.activation(h, Activation::Tanh)?;
        tape.sum(r)
    })
    .unwrap();
    assert!(res.max_rel_error < 1e-5, "{res:?}");
}

#[test]
fn backward_is_pure() {
    let mut rng = gradcheck::rng(9);
    let mut tape = Tape::new();
    let a = tape.param(gradcheck::random_tensor(&mut rng, 3, 3, -1.0, 1.0));
    let b = tape.sigmoid(a).unwrap();
    let c = tape.matmul(b, a).unwrap();
    let l = tape.sum(c).unwrap();
    let g1 = tape.backward(l).unwrap().wrt(a);
    let g2 = tape.backward(l).unwrap().wrt(a);
    assert_eq!(g1, g2);
}

#[test]
fn direct_and_staged_forward_agree_bitwise() {
    let mut rng = gradcheck::rng(21);
    let x = gradcheck::random_tensor(&mut rng, 3, 4, -1.0, 1.0);
    let w = gradcheck::random_tensor(&mut rng, 4, 2, -1.0, 1.0);

    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.constant(w.clone());
    let h = tape.matmul(xv, wv).unwrap();
    let direct = tape.sigmoid(h).unwrap();

    let mut staged = Tape::new();
    let h_value = x.matmul(&w).unwrap();
    let hv = staged.constant(h_value);
    let out = staged.sigmoid(hv).unwrap();
    assert_eq!(tape.value(direct), staged.value(out));
}

#[test]
fn ops_suite_passes() {
    for seed in [0, 1, 2] {
        for res in gradcheck::ops_suite(seed).unwrap() {
            assert!(res.passed(), "{res:?}");
        }
    }
}

#[test]
fn faulty_backward_is_caught() {
    let res = gradcheck::faulty_square_check().unwrap();
    assert!(!res.passed());
    assert_eq!(res.name, "faulty_square");
}

#[test]
fn special_functions_match_statrs() {
    for &x in &[1e-3, 0.07, 0.5, 1.0, 3.3, 9.99, 10.0, 57.5, 400.0, 1000.0] {
        let reference = statrs::function::gamma::ln_gamma(x);
        assert!((log_gamma(x).unwrap() - reference).abs() < 1e-10, "x={x}");
        let dref = statrs::function::gamma::digamma(x);
        assert!((digamma(x).unwrap() - dref).abs() < 1e-10, "x={x}");
    }
    assert!(log_gamma(1.0f64).unwrap().abs() < 1e-15);
    assert!((log_gamma(5.0f64).unwrap() - 24f64.ln()).abs() < 1e-13);
}

#[test]
fn adam_two_steps_match_reference_trace() {
    // Reference computed by a standalone script of the bias-corrected recurrences.
    let mut params = vec![t(&[&[0.5, -1.0, 2.0]])];
    let g = t(&[&[0.3, -0.01, 1.5]]);
    let mut adam = Adam::new(AdamConfig::with_lr(0.003), &params);
    adam.step(&mut params, std::slice::from_ref(&g)).unwrap();
    let step1 = [0.4970000001, -0.997000002999997, 1.99700000002];
    for (a, b) in params[0].data().iter().zip(step1) {
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }
    adam.step(&mut params, std::slice::from_ref(&g)).unwrap();
    let step2 = [0.4940000002, -0.994000005999994, 1.9940000000400002];
    for (a, b) in params[0].data().iter().zip(step2) {
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }
    let m = [0.05699999999999998, -0.0018999999999999998, 0.2849999999999999];
    let v = [0.00017991000000000014, 1.999000000000002e-07, 0.0044977500000000035];
    for k in 0..3 {
        assert!((adam.state.first[0].data()[k] - m[k]).abs() < 1e-16);
        assert!((adam.state.second[0].data()[k] - v[k]).abs() < 1e-18);
    }
    assert_eq!(adam.state.step, 2);
}

#[test]
fn f32_tape_runs_the_same_ops() {
    let mut tape = Tape::<f32>::new();
    let x = tape.param(Tensor::from_rows(&[&[0.5, -0.25]]).unwrap());
    let s = tape.sigmoid(x).unwrap();
    let l = tape.sum(s).unwrap();
    let g = tape.backward(l).unwrap().wrt(x);
    let expected = 0.5f32.exp() / (1.0 + 0.5f32.exp()).powi(2);
    assert!((g.data()[0] - expected).abs() < 1e-6);
}

proptest! {
    #[test]
    fn softmax_rows_stochastic_and_masked_zero(
        rows in 1usize..5,
        cols in 1usize..6,
        seed in any::<u64>(),
    ) {
        let mut rng = gradcheck::rng(seed);
        let x = gradcheck::random_tensor(&mut rng, rows, cols, -30.0, 30.0);
        let mask: Vec<bool> = (0..rows * cols)
            .map(|k| k % cols == 0 || (seed >> (k % 60)) & 1 == 1)
            .collect();
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let y = tape.row_softmax(xv, Some(&mask)).unwrap();
        let y = tape.value(y);
        for i in 0..rows {
            let total: f64 = (0..cols).map(|j| y.at(i, j)).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            for j in 0..cols {
                if !mask[i * cols + j] {
                    prop_assert_eq!(y.at(i, j), 0.0);
                }
            }
        }
    }
}
