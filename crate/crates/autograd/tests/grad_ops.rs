use autograd::gradcheck::{check_params, worst};
use autograd::ndarray::{ArrayD, Dimension, IxDyn};
use autograd::{Adam, ParamStore, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-6;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

/// Weighted sum so every output entry contributes a distinct gradient.
fn probe<'t>(tape: &'t Tape<f64>, y: Var<'t, f64>) -> Var<'t, f64> {
    let shape = y.shape();
    let n: usize = shape.iter().product();
    let w = ArrayD::from_shape_fn(IxDyn(&shape), |ix| {
        let flat: usize = ix.slice().iter().fold(0, |acc, &i| acc * 31 + i);
        ((flat % 13) as f64 - 6.0) / 7.0 + 0.05 * (flat as f64 / n as f64)
    });
    (y * tape.constant(w)).sum()
}

fn check<F>(store: &ParamStore<f64>, f: F)
where
    F: for<'t> Fn(&'t Tape<f64>, &ParamStore<f64>) -> Var<'t, f64>,
{
    let reports = check_params(store, &[], 1e-6, |t, s| probe(t, f(t, s)));
    assert!(worst(&reports) < TOL, "{reports:#?}");
}

#[test]
fn batched_matmul_all_transpose_modes() {
    let mut r = rng();
    let mut s = ParamStore::<f64>::new();
    let a = s.uniform("a", &[2, 3, 4], 1.0, &mut r);
    let b = s.uniform("b", &[2, 4, 5], 1.0, &mut r);
    let at = s.uniform("at", &[2, 4, 3], 1.0, &mut r);
    let bt = s.uniform("bt", &[2, 5, 4], 1.0, &mut r);
    let w = s.uniform("w", &[4, 5], 1.0, &mut r);
    check(&s, |t, s| t.param(s, a).matmul(t.param(s, b)));
    check(&s, |t, s| t.param(s, at).matmul_t(t.param(s, b), true, false));
    check(&s, |t, s| t.param(s, a).matmul_t(t.param(s, bt), false, true));
    check(&s, |t, s| t.param(s, at).matmul_t(t.param(s, bt), true, true));
    check(&s, |t, s| t.param(s, a).matmul(t.param(s, w)));
    check(&s, |t, s| t.param(s, at).matmul_t(t.param(s, w), true, false));
    check(&s, |t, s| t.param(s, a).linear(t.param(s, w)));
}

#[test]
fn broadcasting_binary_ops() {
    let mut r = rng();
    let mut s = ParamStore::<f64>::new();
    let x = s.uniform("x", &[2, 3, 4], 1.0, &mut r);
    let b = s.uniform("b", &[4], 1.0, &mut r);
    let c = s.uniform("c", &[2, 1, 4], 1.0, &mut r);
    let d = s.uniform("d", &[3, 1], 1.0, &mut r);
    check(&s, |t, s| t.param(s, x) + t.param(s, b));
    check(&s, |t, s| t.param(s, x) * t.param(s, c));
    check(&s, |t, s| t.param(s, x) - t.param(s, d));
    check(&s, |t, s| t.param(s, x) * t.param(s, x));
}

#[test]
fn unary_maps() {
    let mut r = rng();
    let mut s = ParamStore::<f64>::new();
    let x = s.uniform("x", &[3, 5], 2.0, &mut r);
    check(&s, |t, s| t.param(s, x).sigmoid());
    check(&s, |t, s| t.param(s, x).silu());
    check(&s, |t, s| t.param(s, x).tanh());
    check(&s, |t, s| t.param(s, x).leaky_relu(0.2));
    check(&s, |t, s| t.param(s, x).square().add_scalar(0.5).sqrt());
    check(&s, |t, s| t.param(s, x).exp().scale(0.3));
}

#[test]
fn softmax_layernorm_and_masks() {
    let mut r = rng();
    let mut s = ParamStore::<f64>::new();
    let x = s.uniform("x", &[2, 3, 5], 2.0, &mut r);
    let mask = ArrayD::from_shape_fn(IxDyn(&[2, 1, 5]), |ix| (ix[0] + ix[2]) % 3 != 0);
    check(&s, |t, s| t.param(s, x).softmax(None));
    check(&s, |t, s| t.param(s, x).softmax(Some(&mask)));
    check(&s, |t, s| t.param(s, x).layer_norm(1e-5));
    check(&s, |t, s| t.param(s, x).log_softmax());
    check(&s, |t, s| t.param(s, x).square().add_scalar(0.1).ln());
}

#[test]
fn shape_ops() {
    let mut r = rng();
    let mut s = ParamStore::<f64>::new();
    let x = s.uniform("x", &[2, 3, 4], 1.0, &mut r);
    let y = s.uniform("y", &[2, 3, 2], 1.0, &mut r);
    let e = s.uniform("e", &[5, 3], 1.0, &mut r);
    check(&s, |t, s| t.param(s, x).permute(&[2, 0, 1]));
    check(&s, |t, s| t.param(s, x).reshape(&[6, 4]).transpose_last());
    check(&s, |t, s| Var::concat(&[t.param(s, x), t.param(s, y)], 2));
    check(&s, |t, s| t.param(s, x).narrow(2, 1, 2));
    check(&s, |t, s| t.param(s, x).sum_axis(1, true) * t.param(s, x));
    check(&s, |t, s| t.param(s, x).mean_axis(2, false));
    check(&s, |t, s| {
        t.param(s, e)
            .gather_rows(&[Some(1), None, Some(4), Some(1)])
    });
}

#[test]
fn softmax_rows_sum_to_one_and_dead_rows_are_zero() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(ArrayD::from_shape_fn(IxDyn(&[2, 3]), |ix| ix[1] as f64));
    let mask = ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![true, false, true, false, false, false]).unwrap();
    let y = x.softmax(Some(&mask)).value();
    assert!((y[[0, 0]] + y[[0, 2]] - 1.0).abs() < 1e-12);
    assert_eq!(y[[0, 1]], 0.0);
    assert!(y.index_axis(autograd::ndarray::Axis(0), 1).iter().all(|&v| v == 0.0));
}

#[test]
fn adam_minimizes_a_quadratic() {
    let mut s = ParamStore::<f64>::new();
    let x = s.filled("x", &[3], 4.0);
    let mut opt = Adam::new(&s, 0.1);
    for _ in 0..500 {
        let tape = Tape::new();
        let loss = tape.param(&s, x).add_scalar(-1.0).square().sum();
        let g = tape.backward(loss).dense(&s);
        drop(tape);
        opt.step(&mut s, &g);
    }
    assert!(s.get(x).iter().all(|&v| (v - 1.0).abs() < 1e-2), "{:?}", s.get(x));
}

#[test]
fn inference_tape_records_no_gradients() {
    let mut s = ParamStore::<f64>::new();
    let x = s.filled("x", &[2], 1.0);
    let tape = Tape::inference();
    let y = tape.param(&s, x).square().sum();
    assert_eq!(y.item(), 2.0);
    assert!(tape.backward(y).param(x).is_none());
}
