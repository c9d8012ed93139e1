use super::*;
use crate::error::Error;
use crate::rng::Rng;

fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

#[test]
fn matmul_with_identity_is_identity() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let i = t.constant(Tensor::identity(2));
    let c = t.matmul(a, i).unwrap();
    assert_eq!(t.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn squared_distance_of_coincident_points_is_zero() {
    let mut rng = Rng::new(0);
    let mut t = Tape::new();
    let v = random(&[5, 7], &mut rng);
    let a = t.constant(v.clone());
    let b = t.constant(v);
    let d = t.squared_l2_distance(a, b).unwrap();
    assert!(t.value(d).data().iter().all(|&x| x == 0.0));
}

#[test]
fn sum_gradient_is_ones() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::from_vec(vec![0.3, -2.0, 5.0]));
    let s = t.sum(x).unwrap();
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn squared_distance_to_origin_gradient() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::from_vec(vec![3.0]));
    let z = t.constant(Tensor::from_vec(vec![0.0]));
    let d = t.squared_l2_distance(x, z).unwrap();
    t.backward(d).unwrap();
    assert_eq!(t.grad(x).unwrap().data(), &[6.0]);
}

#[test]
fn conv2d_gradient_matches_finite_differences() {
    let mut rng = Rng::derive(11, "conv-check", 0);
    let x = random(&[1, 1, 4, 4], &mut rng);
    let w = random(&[1, 1, 3, 3], &mut rng);
    let wc = w.clone();
    let r = finite_diff_check(
        move |t, x| {
            let w = t.constant(wc.clone());
            let y = t.conv2d(x, w, None, 1, 0)?;
            let y2 = t.mul(y, y)?;
            t.sum(y2)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(r.max_relative_error <= 1e-6, "input grad {r:?}");
    let xc = x.clone();
    let r = finite_diff_check(
        move |t, w| {
            let x = t.constant(xc.clone());
            let y = t.conv2d(x, w, None, 1, 0)?;
            let y2 = t.mul(y, y)?;
            t.sum(y2)
        },
        &w,
        1e-5,
    )
    .unwrap();
    assert!(r.max_relative_error <= 1e-6, "kernel grad {r:?}");
}

#[test]
fn transposed_conv_is_adjoint_of_conv() {
    // <conv(x), y> == <x, conv_t(y)> with the kernel reinterpreted.
    let mut rng = Rng::new(5);
    let x = random(&[1, 2, 6, 6], &mut rng);
    let w = random(&[3, 2, 3, 3], &mut rng);
    let y = random(&[1, 3, 3, 3], &mut rng);
    let mut t = Tape::new();
    let (xv, wv, yv) = (t.constant(x.clone()), t.constant(w.clone()), t.constant(y.clone()));
    let cx = t.conv2d(xv, wv, None, 2, 1).unwrap();
    let lhs: f64 = t.value(cx).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
    let ty = t.conv_transpose2d(yv, wv, None, 2, 1, 1).unwrap();
    assert_eq!(t.shape(ty), &[1, 2, 6, 6]);
    let rhs: f64 = t.value(ty).data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
}

#[test]
fn backward_twice_is_bit_identical() {
    let mut rng = Rng::new(9);
    let mut t = Tape::new();
    let x = t.leaf(random(&[2, 3, 5, 5], &mut rng));
    let w = t.leaf(random(&[4, 3, 3, 3], &mut rng));
    let y = t.conv2d(x, w, None, 1, 1).unwrap();
    let n = t.instance_norm(y).unwrap();
    let r = t.tanh(n).unwrap();
    let l = t.mean(r).unwrap();
    t.backward(l).unwrap();
    let (gx, gw) = (t.grad(x).unwrap(), t.grad(w).unwrap());
    t.backward(l).unwrap();
    assert_eq!(gx, t.grad(x).unwrap());
    assert_eq!(gw, t.grad(w).unwrap());
}

#[test]
fn linear_combination_of_gradients_is_exact() {
    // Power-of-two coefficients keep every scaling exact in binary floating point.
    let (a, b) = (2.0, -0.5);
    let mut rng = Rng::new(21);
    let x0 = random(&[3, 4], &mut rng);
    let ma = random(&[4, 2], &mut rng);
    let mb = random(&[4, 2], &mut rng);
    let grad_of = |ca: f64, cb: f64| {
        let mut t = Tape::new();
        let x = t.leaf(x0.clone());
        let (pa, pb) = (t.constant(ma.clone()), t.constant(mb.clone()));
        let fa = t.matmul(x, pa).unwrap();
        let fa = t.sum(fa).unwrap();
        let fb = t.matmul(x, pb).unwrap();
        let fb = t.sum(fb).unwrap();
        let sa = t.scale(fa, ca).unwrap();
        let sb = t.scale(fb, cb).unwrap();
        let l = t.add(sa, sb).unwrap();
        t.backward(l).unwrap();
        t.grad(x).unwrap()
    };
    let combined = grad_of(a, b);
    let ga = grad_of(1.0, 0.0);
    let gb = grad_of(0.0, 1.0);
    for i in 0..combined.len() {
        assert_eq!(combined.data()[i], a * ga.data()[i] + b * gb.data()[i]);
    }
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::from_vec(vec![1.0, 2.0]));
    let y = t.scale(x, 2.0).unwrap();
    assert!(matches!(t.backward(y), Err(Error::NonScalarLoss(_))));
}

#[test]
fn backward_without_forward_is_rejected() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::scalar(1.0));
    assert!(matches!(t.backward(x), Err(Error::EmptyTape)));
}

#[test]
fn non_finite_values_fail_at_the_op() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::from_vec(vec![-1.0]));
    assert!(matches!(t.log(x), Err(Error::NonFinite { op: "log" })));
}

#[test]
fn shape_mismatch_is_reported() {
    let mut t = Tape::new();
    let a = t.leaf(Tensor::zeros(&[2, 3]));
    let b = t.leaf(Tensor::zeros(&[3, 2]));
    assert!(matches!(t.add(a, b), Err(Error::ShapeMismatch { .. })));
    let c = t.leaf(Tensor::zeros(&[2, 2]));
    assert!(matches!(t.matmul(a, c), Err(Error::ShapeMismatch { .. })));
    let img = t.leaf(Tensor::zeros(&[4, 4]));
    let k = t.leaf(Tensor::zeros(&[1, 1, 3, 3]));
    assert!(matches!(t.conv2d(img, k, None, 1, 0), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn gradients_accumulate_over_reuse() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::from_vec(vec![2.0]));
    let y = t.add(x, x).unwrap();
    let z = t.mul(y, x).unwrap(); // 2x²
    let s = t.sum(z).unwrap();
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap().data(), &[8.0]);
}

#[test]
fn clamp_tie_takes_the_clamp_branch() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::from_vec(vec![-1.0, 0.5]));
    let c = t.clamp_min(x, -1.0).unwrap();
    let s = t.sum(c).unwrap();
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap().data(), &[0.0, 1.0]);
}

#[test]
fn log_softmax_rows_normalize() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -5.0, 0.0, 5.0]).unwrap());
    let y = t.log_softmax(x).unwrap();
    for row in t.value(y).data().chunks(3) {
        let total: f64 = row.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn l2_normalize_rows_gradient() {
    let mut rng = Rng::new(31);
    let x = random(&[3, 4], &mut rng);
    let probe = random(&[3, 4], &mut rng);
    let r = finite_diff_check(
        move |t, x| {
            let y = t.l2_normalize_rows(x)?;
            let p = t.constant(probe.clone());
            let m = t.mul(y, p)?;
            t.sum(m)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(r.max_relative_error <= 1e-6, "{r:?}");
}
