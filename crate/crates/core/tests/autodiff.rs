mod common;

use dear::autodiff::{eval, grad_check, vjp, Prim, Tape, Tensor};
use proptest::prelude::*;

#[test]
fn every_primitive_passes_grad_check() {
    for seed in 0..5 {
        for (name, x, f) in common::primitive_cases(seed) {
            let err = grad_check(&f, &x, 1e-5);
            assert!(err < 1e-6, "{name} (seed {seed}): relative error {err:e}");
        }
    }
}

#[test]
fn eval_matches_definitions() {
    let i2 = Tensor::eye(2);
    let m = Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap();
    assert_eq!(eval(&Prim::MatMul, &[&i2, &m]).unwrap(), m);
    let v = Tensor::vector(vec![-1.0, 2.0]);
    assert_eq!(eval(&Prim::Relu, &[&v]).unwrap().to_vec(), vec![0.0, 2.0]);
}

#[test]
fn vjp_of_linear_map_is_transpose_product() {
    let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0]).unwrap();
    let z = Tensor::matrix(3, 1, vec![0.1, 0.2, 0.3]).unwrap();
    let u = Tensor::matrix(2, 1, vec![2.0, -1.0]).unwrap();
    let g = vjp(|t, z| {
        let av = t.constant(a.clone());
        t.matmul(av, z)
    }, &z, &u)
    .unwrap();
    assert_eq!(g.to_vec(), vec![3.0, 3.5, 2.0]);
}

fn vec_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-3.0f64..3.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vjp_is_linear_in_cotangent(z in vec_strategy(6), u1 in vec_strategy(6), u2 in vec_strategy(6), c in -2.0f64..2.0) {
        let f = |t: &mut Tape, z| {
            let s = t.tanh(z)?;
            t.mul(s, z)
        };
        let zt = Tensor::matrix(2, 3, z).unwrap();
        let a = Tensor::matrix(2, 3, u1).unwrap();
        let b = Tensor::matrix(2, 3, u2).unwrap();
        let combo = a.zip_map(&b, |x, y| x + c * y).unwrap();
        let lhs = vjp(f, &zt, &combo).unwrap();
        let ga = vjp(f, &zt, &a).unwrap();
        let gb = vjp(f, &zt, &b).unwrap();
        for ((l, x), y) in lhs.data().iter().zip(ga.data()).zip(gb.data()) {
            prop_assert!((l - (x + c * y)).abs() < 1e-10);
        }
    }

    #[test]
    fn smooth_composition_grad_checks(x in vec_strategy(8)) {
        let xt = Tensor::matrix(2, 4, x).unwrap();
        let err = grad_check(|t, x| {
            let a = t.sigmoid(x)?;
            let b = t.log_softmax_rows(x)?;
            let c = t.mul(a, b)?;
            let d = t.layer_norm(c, 1e-5)?;
            let e = t.softplus(d)?;
            t.mean(e)
        }, &xt, 1e-5);
        prop_assert!(err < 1e-6, "relative error {err:e}");
    }

    #[test]
    fn softmax_rows_sum_to_one(x in vec_strategy(12)) {
        let t = Tensor::matrix(3, 4, x).unwrap();
        let s = eval(&Prim::SoftmaxRows, &[&t]).unwrap();
        for r in 0..3 {
            let sum: f64 = s.row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn segment_max_dominates_members(x in vec_strategy(10), segs in proptest::collection::vec(0usize..3, 10)) {
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::matrix(10, 1, x.clone()).unwrap());
        let m = tape.segment_max(xv, segs.clone(), 3).unwrap();
        let out = tape.value(m).to_vec();
        for (v, &s) in x.iter().zip(&segs) {
            prop_assert!(out[s] >= *v);
        }
        for s in 0..3 {
            if segs.contains(&s) {
                prop_assert!(x.iter().zip(&segs).any(|(v, &k)| k == s && *v == out[s]));
            }
        }
    }

    #[test]
    fn backward_twice_is_identical(x in vec_strategy(6)) {
        let mut tape = Tape::new();
        let v = tape.var(Tensor::matrix(2, 3, x).unwrap());
        let y = tape.tanh(v).unwrap();
        let l = tape.l2_norm(y).unwrap();
        let g1 = tape.backward(l).unwrap().get_or_zeros(v, &Tensor::zeros(vec![2, 3]));
        let g2 = tape.backward(l).unwrap().get_or_zeros(v, &Tensor::zeros(vec![2, 3]));
        prop_assert_eq!(g1, g2);
    }
}
