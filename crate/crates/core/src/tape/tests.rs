use proptest::prelude::*;

use super::*;

fn vecp(tape: &mut Tape, v: &[f64]) -> Var {
    tape.parameter(Tensor::vector(v.to_vec())).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn parameter_holds_values_and_no_grad() {
    let mut tape = Tape::new();
    let p = vecp(&mut tape, &[1.0, 2.0]);
    assert_eq!(tape.value(p).as_slice(), &[1.0, 2.0]);
    assert!(tape.grad(p).is_none());
    assert!(tape.requires_grad(p));
}

#[test]
fn backward_from_parameter_is_one() {
    let mut tape = Tape::new();
    let p = vecp(&mut tape, &[0.0]);
    tape.backward(p).unwrap();
    assert_eq!(tape.grad(p).unwrap().as_slice(), &[1.0]);

    let mut tape = Tape::new();
    let p = vecp(&mut tape, &[5.0]);
    tape.backward(p).unwrap();
    assert_eq!(tape.grad(p).unwrap().as_slice(), &[1.0]);
}

#[test]
fn non_finite_parameter_rejected() {
    let mut tape = Tape::new();
    let err = tape
        .parameter(Tensor::vector(vec![1.0, f64::NAN]))
        .unwrap_err();
    assert_eq!(err, TapeError::NonFiniteInput { index: 1 });
    assert!(tape.constant(Tensor::scalar(f64::INFINITY)).is_err());
}

#[test]
fn affine_identity_and_hand_product() {
    let mut tape = Tape::new();
    let w = tape
        .parameter(Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap())
        .unwrap();
    let b = vecp(&mut tape, &[0.0, 0.0]);
    let x = vecp(&mut tape, &[3.0, -1.0]);
    let y = tape.affine(w, b, x).unwrap();
    assert_eq!(tape.value(y).as_slice(), &[3.0, -1.0]);

    let w2 = tape
        .parameter(Tensor::new(2, 2, vec![2.0, 0.0, 0.0, 2.0]).unwrap())
        .unwrap();
    let b2 = vecp(&mut tape, &[1.0, 1.0]);
    let x2 = vecp(&mut tape, &[1.0, 1.0]);
    let y2 = tape.affine(w2, b2, x2).unwrap();
    assert_eq!(tape.value(y2).as_slice(), &[3.0, 3.0]);
}

#[test]
fn affine_bias_gradient_is_ones() {
    let mut tape = Tape::new();
    let w = tape
        .parameter(Tensor::new(3, 2, vec![0.5, -1.0, 2.0, 0.0, 1.5, 0.25]).unwrap())
        .unwrap();
    let b = vecp(&mut tape, &[0.1, 0.2, 0.3]);
    let x = vecp(&mut tape, &[1.0, -2.0]);
    let y = tape.affine(w, b, x).unwrap();
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(b).unwrap().as_slice(), &[1.0, 1.0, 1.0]);
    // d sum / dx = W^T 1
    assert!(close(
        tape.grad(x).unwrap().as_slice(),
        &[4.0, -0.75],
        1e-15
    ));
    // d sum / dW = 1 x^T
    assert!(close(
        tape.grad(w).unwrap().as_slice(),
        &[1.0, -2.0, 1.0, -2.0, 1.0, -2.0],
        0.0
    ));
}

#[test]
fn affine_shape_errors() {
    let mut tape = Tape::new();
    let w = tape.parameter(Tensor::zeros(2, 3)).unwrap();
    let b = vecp(&mut tape, &[0.0, 0.0]);
    let x = vecp(&mut tape, &[1.0, 2.0]);
    assert!(matches!(
        tape.affine(w, b, x),
        Err(TapeError::ShapeMismatch { op: "affine", .. })
    ));
    let x3 = vecp(&mut tape, &[1.0, 2.0, 3.0]);
    let b3 = vecp(&mut tape, &[0.0, 0.0, 0.0]);
    assert!(tape.affine(w, b3, x3).is_err());
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::new();
    let x = vecp(&mut tape, &[1.0, -1.0]);
    let gain = vecp(&mut tape, &[1.0, 1.0]);
    let bias = vecp(&mut tape, &[0.0, 0.0]);
    let y = tape.layer_norm(x, gain, bias, 1e-5).unwrap();
    let expected = 1.0 / (1.0f64 + 1e-5).sqrt();
    assert!(close(
        tape.value(y).as_slice(),
        &[expected, -expected],
        1e-15
    ));
    assert!((expected - 0.999995).abs() < 1e-6);

    let c = vecp(&mut tape, &[4.2, 4.2]);
    let y = tape.layer_norm(c, gain, bias, 1e-5).unwrap();
    assert_eq!(tape.value(y).as_slice(), &[0.0, 0.0]);

    let zero_gain = vecp(&mut tape, &[0.0, 0.0, 0.0]);
    let bias3 = vecp(&mut tape, &[0.5, -0.25, 2.0]);
    let x3 = vecp(&mut tape, &[3.0, -7.0, 0.1]);
    let y = tape.layer_norm(x3, zero_gain, bias3, 1e-5).unwrap();
    assert_eq!(tape.value(y).as_slice(), &[0.5, -0.25, 2.0]);

    assert!(tape.layer_norm(x3, zero_gain, bias3, 0.0).is_err());
    assert!(tape.layer_norm(x, zero_gain, bias3, 1e-5).is_err());
}

#[test]
fn layer_norm_normalizes_each_column() {
    let mut tape = Tape::new();
    let x = tape
        .constant(Tensor::new(3, 2, vec![1.0, 10.0, 2.0, 20.0, 3.0, 60.0]).unwrap())
        .unwrap();
    let gain = tape.constant(Tensor::filled(3, 1, 1.0)).unwrap();
    let bias = tape.constant(Tensor::zeros(3, 1)).unwrap();
    let y = tape.layer_norm(x, gain, bias, 1e-12).unwrap();
    let v = tape.value(y);
    for j in 0..2 {
        let col = v.column(j);
        let mean: f64 = col.iter().sum::<f64>() / 3.0;
        let var: f64 = col.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }
}

#[test]
fn silu_values() {
    let mut tape = Tape::new();
    let x = vecp(&mut tape, &[0.0, 1.0, 40.0, -40.0]);
    let y = tape.silu(x);
    let v = tape.value(y).as_slice();
    assert_eq!(v[0], 0.0);
    let expected_one = 1.0 / (1.0 + (-1.0f64).exp());
    assert!((v[1] - expected_one).abs() < 1e-15);
    assert!((v[1] - 0.731059).abs() < 1e-6);
    assert!((v[2] - 40.0).abs() < 1e-12);
    assert!(v[3].abs() < 1e-15);
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::new();
    let a = vecp(&mut tape, &[1.0, 2.0]);
    let b = vecp(&mut tape, &[3.0, 4.0]);
    let s = tape.add(a, b).unwrap();
    assert_eq!(tape.value(s).as_slice(), &[4.0, 6.0]);
    let d = tape.sub(a, b).unwrap();
    assert_eq!(tape.value(d).as_slice(), &[-2.0, -2.0]);
    let n = vecp(&mut tape, &[1.0, -1.0]);
    let sc = tape.scale(n, -2.0);
    assert_eq!(tape.value(sc).as_slice(), &[-2.0, 2.0]);

    let mut tape = Tape::new();
    let a = vecp(&mut tape, &[2.0, 3.0]);
    let b = vecp(&mut tape, &[4.0, 5.0]);
    let m = tape.mul(a, b).unwrap();
    assert_eq!(tape.value(m).as_slice(), &[8.0, 15.0]);
    let s = tape.sum(m);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(a).unwrap().as_slice(), &[4.0, 5.0]);
    assert_eq!(tape.grad(b).unwrap().as_slice(), &[2.0, 3.0]);

    let mut tape = Tape::new();
    let a = vecp(&mut tape, &[1.0, 2.0]);
    let c = vecp(&mut tape, &[1.0, 2.0, 3.0]);
    assert!(tape.add(a, c).is_err());
    assert!(tape.mul(a, c).is_err());
    assert!(tape.add_scalar(a, c).is_err());
}

#[test]
fn mse_examples() {
    let mut tape = Tape::new();
    let p = vecp(&mut tape, &[1.0, 3.0]);
    let l = tape.mse_loss(p, &Tensor::vector(vec![1.0, 3.0])).unwrap();
    assert_eq!(tape.value(l).item(), 0.0);
    let l = tape.mse_loss(p, &Tensor::vector(vec![0.0, 0.0])).unwrap();
    assert_eq!(tape.value(l).item(), 5.0);
    assert!(tape.mse_loss(p, &Tensor::vector(vec![0.0])).is_err());

    let mut tape = Tape::new();
    let p = vecp(&mut tape, &[1.0]);
    let l = tape.mse_loss(p, &Tensor::vector(vec![0.0])).unwrap();
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(p).unwrap().as_slice(), &[2.0]);
}

#[test]
fn least_squares_gradient_matches_closed_form() {
    // L(b) = |x + b - t|^2 / n with W = I: dL/db = 2 (x + b - t) / n
    let x = [0.5, -1.0, 2.0];
    let b = [0.1, 0.2, -0.3];
    let t = [1.0, 1.0, 1.0];
    let mut tape = Tape::new();
    let w = tape
        .parameter(Tensor::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.0 }))
        .unwrap();
    let bv = vecp(&mut tape, &b);
    let xv = tape.constant(Tensor::vector(x.to_vec())).unwrap();
    let y = tape.affine(w, bv, xv).unwrap();
    let l = tape.mse_loss(y, &Tensor::vector(t.to_vec())).unwrap();
    tape.backward(l).unwrap();
    let expected: Vec<f64> = (0..3).map(|i| 2.0 * (x[i] + b[i] - t[i]) / 3.0).collect();
    assert!(close(tape.grad(bv).unwrap().as_slice(), &expected, 1e-15));
    let mut expected_w = Vec::new();
    for e in &expected {
        for xk in &x {
            expected_w.push(e * xk);
        }
    }
    assert!(close(tape.grad(w).unwrap().as_slice(), &expected_w, 1e-15));
    assert!(tape.grad(xv).is_none());
}

#[test]
fn disconnected_parameter_gets_zero_grad() {
    let mut tape = Tape::new();
    let used = vecp(&mut tape, &[2.0]);
    let unused = vecp(&mut tape, &[1.0, 2.0, 3.0]);
    let l = tape.scale(used, 3.0);
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(used).unwrap().as_slice(), &[3.0]);
    assert_eq!(tape.grad(unused).unwrap().as_slice(), &[0.0, 0.0, 0.0]);
}

#[test]
fn backward_errors() {
    let mut tape = Tape::new();
    let p = vecp(&mut tape, &[1.0, 2.0]);
    assert_eq!(
        tape.backward(p),
        Err(TapeError::NonScalarLoss { shape: (2, 1) })
    );
    let s = tape.sum(p);
    tape.backward(s).unwrap();
    assert_eq!(tape.backward(s), Err(TapeError::AlreadyConsumed));

    tape.clear();
    assert_eq!(tape.len(), 0);
    assert!(!tape.is_consumed());
}

#[test]
fn diamond_sums_both_paths() {
    // y = x*x + 3x  ->  dy/dx = 2x + 3
    let mut tape = Tape::new();
    let x = vecp(&mut tape, &[1.5]);
    let sq = tape.mul(x, x).unwrap();
    let lin = tape.scale(x, 3.0);
    let y = tape.add(sq, lin).unwrap();
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(x).unwrap().as_slice(), &[6.0]);
}

#[test]
fn slice_and_concat_round_trip() {
    let mut tape = Tape::new();
    let x = vecp(&mut tape, &[1.0, 2.0, 3.0, 4.0]);
    let top = tape.slice_rows(x, 0, 2).unwrap();
    let bottom = tape.slice_rows(x, 2, 2).unwrap();
    let back = tape.concat_rows(bottom, top).unwrap();
    assert_eq!(tape.value(back).as_slice(), &[3.0, 4.0, 1.0, 2.0]);
    assert!(tape.slice_rows(x, 3, 2).is_err());
    let weights = tape
        .constant(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]))
        .unwrap();
    let weighted = tape.mul(back, weights).unwrap();
    let s = tape.sum(weighted);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().as_slice(), &[3.0, 4.0, 1.0, 2.0]);
}

#[test]
fn gradcheck_quadratic_and_constant() {
    let report = finite_difference_check(
        |tape, p| {
            let sq = tape.mul(p[0], p[0])?;
            Ok(tape.sum(sq))
        },
        &[Tensor::scalar(3.0)],
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-8, "{report:?}");

    let report = finite_difference_check(
        |tape, _| tape.constant(Tensor::scalar(7.0)),
        &[Tensor::vector(vec![1.0, 2.0])],
        1e-5,
    )
    .unwrap();
    assert_eq!(report.max_rel_error, 0.0);
    assert!(finite_difference_check(|t, p| Ok(t.sum(p[0])), &[Tensor::scalar(1.0)], 0.0).is_err());
}

fn small_values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, len)
}

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-5;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn elementwise_ops_match_finite_differences(a in small_values(4), b in small_values(4), c in -2.0f64..2.0) {
        let params = [Tensor::vector(a), Tensor::vector(b), Tensor::scalar(c)];
        let report = finite_difference_check(|tape, p| {
            let s = tape.add(p[0], p[1])?;
            let d = tape.sub(s, p[1])?;
            let m = tape.mul(d, p[1])?;
            let m = tape.mul(m, p[0])?;
            let k = tape.scale(m, -1.7);
            let o = tape.offset(k, 0.3);
            let as_ = tape.add_scalar(o, p[2])?;
            let ms = tape.mul_scalar(as_, p[2])?;
            let t = tape.tanh(ms);
            let si = tape.silu(t);
            Ok(tape.sum(si))
        }, &params, FD_STEP).unwrap();
        prop_assert!(report.max_rel_error < FD_TOL, "{:?}", report);
    }

    #[test]
    fn affine_layer_norm_mse_match_finite_differences(
        w in small_values(6), b in small_values(3), x in small_values(4),
        gain in small_values(3), bias in small_values(3), target in small_values(6),
    ) {
        let params = [
            Tensor::new(3, 2, w).unwrap(),
            Tensor::vector(b),
            Tensor::new(2, 2, x).unwrap(),
            Tensor::vector(gain),
            Tensor::vector(bias),
        ];
        let target = Tensor::new(3, 2, target).unwrap();
        let report = finite_difference_check(|tape, p| {
            let y = tape.affine(p[0], p[1], p[2])?;
            let n = tape.layer_norm(y, p[3], p[4], 1e-5)?;
            tape.mse_loss(n, &target)
        }, &params, FD_STEP).unwrap();
        prop_assert!(report.max_rel_error < FD_TOL, "{:?}", report);
    }

    #[test]
    fn slice_concat_match_finite_differences(x in small_values(6), y in small_values(2)) {
        let params = [Tensor::new(3, 2, x).unwrap(), Tensor::new(1, 2, y).unwrap()];
        let report = finite_difference_check(|tape, p| {
            let top = tape.slice_rows(p[0], 0, 2)?;
            let bottom = tape.slice_rows(p[0], 2, 1)?;
            let prod = tape.mul(bottom, p[1])?;
            let joined = tape.concat_rows(prod, top)?;
            let sq = tape.mul(joined, joined)?;
            Ok(tape.sum(sq))
        }, &params, FD_STEP).unwrap();
        prop_assert!(report.max_rel_error < FD_TOL, "{:?}", report);
    }

    #[test]
    fn forward_and_backward_are_deterministic(a in small_values(3), b in small_values(3)) {
        let run = || {
            let mut tape = Tape::new();
            let pa = tape.parameter(Tensor::vector(a.clone())).unwrap();
            let pb = tape.parameter(Tensor::vector(b.clone())).unwrap();
            let m = tape.mul(pa, pb).unwrap();
            let s = tape.silu(m);
            let l = tape.mse_loss(s, &Tensor::vector(vec![0.1, 0.2, 0.3])).unwrap();
            tape.backward(l).unwrap();
            (
                tape.value(l).item().to_bits(),
                tape.grad(pa).unwrap().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                tape.grad(pb).unwrap().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            )
        };
        prop_assert_eq!(run(), run());
    }
}
