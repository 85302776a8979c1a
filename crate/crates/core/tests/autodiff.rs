use pocketgfn::autodiff::{finite_diff_check, finite_diff_check_params, Mlp, ParamStore, Tape, Tensor};
use proptest::prelude::*;

fn tensor(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::new(vec![rows, cols], data).unwrap()
}

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Tensor> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-5.0f64..5.0, r * c).prop_map(move |d| tensor(r, c, d))
    })
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(x in matrix(5, 7)) {
        let tape = Tape::new();
        let y = tape.constant(x.clone()).softmax(None).unwrap().value();
        for i in 0..x.shape[0] {
            let s: f64 = y.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn masked_softmax_rows_sum_to_one_and_zero_masked(
        (x, mask) in matrix(4, 6).prop_flat_map(|x| {
            let (r, c) = (x.shape[0], x.shape[1]);
            // One guaranteed survivor per row.
            let mask = prop::collection::vec(any::<bool>(), r * c).prop_map(move |mut m| {
                for i in 0..r {
                    m[i * c] = true;
                }
                m
            });
            (Just(x), mask)
        })
    ) {
        let tape = Tape::new();
        let y = tape.constant(x.clone()).softmax(Some(&mask)).unwrap().value();
        let c = x.shape[1];
        for i in 0..x.shape[0] {
            let s: f64 = y.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            for j in 0..c {
                if !mask[i * c + j] {
                    prop_assert_eq!(y.row(i)[j], 0.0);
                }
            }
        }
    }

    #[test]
    fn forward_is_bit_identical(x in matrix(3, 4), seed in 0u64..1000) {
        let mut store = ParamStore::new(seed);
        let mlp = Mlp::new(&mut store, "m", &[x.shape[1], 5, 2]).unwrap();
        let run = || {
            let tape = Tape::new();
            let y = mlp.forward(&tape, &store, tape.constant(x.clone())).unwrap();
            y.softmax(None).unwrap().value()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn broadcast_add_gradient_sums_over_rows(x in matrix(5, 4)) {
        let tape = Tape::new();
        let a = tape.var(x.clone());
        let b = tape.var(Tensor::zeros(&[1, x.shape[1]]));
        tape.backward(a.add(b).unwrap().sum()).unwrap();
        let g = b.grad().unwrap();
        prop_assert!(g.data.iter().all(|&v| v == x.shape[0] as f64));
    }

    #[test]
    fn primitive_compositions_match_finite_differences(x in matrix(3, 4)) {
        let x = Tensor::new(x.shape.clone(), x.data.iter().map(|v| v / 5.0).collect()).unwrap();
        let r = finite_diff_check(
            |t, v| {
                let w = t.constant(Tensor::filled(&[x.shape[1], 2], 0.3));
                v.layer_norm(1e-5)?.matmul(w)?.sigmoid().mul(v.sum_axis(1)?.exp())?.logsumexp(None)?.sum().ln().square()
            },
            &x,
            1e-4,
        ).unwrap();
        prop_assert!(r.passed, "{r:?}");
    }
}

#[test]
fn hand_checked_matmul() {
    let tape = Tape::new();
    let a = tape.constant(tensor(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
    let b = tape.constant(tensor(2, 1, vec![1.0, 1.0]));
    assert_eq!(a.matmul(b).unwrap().value().data, vec![3.0, 7.0]);
}

#[test]
fn softmax_of_one_two_three() {
    let tape = Tape::new();
    let y = tape.constant(tensor(1, 3, vec![1.0, 2.0, 3.0])).softmax(None).unwrap().value();
    // e^k / (e + e^2 + e^3)
    let z: f64 = (1..=3).map(|k| (k as f64).exp()).sum();
    for (k, &p) in y.data.iter().enumerate() {
        assert!((p - ((k + 1) as f64).exp() / z).abs() < 1e-12);
    }
    assert!((y.data[0] - 0.09003).abs() < 1e-4 && (y.data[2] - 0.66524).abs() < 1e-4);
}

#[test]
fn two_layer_mlp_parameter_gradients() {
    let mut store = ParamStore::new(11);
    let mlp = Mlp::new(&mut store, "mlp", &[3, 6, 2]).unwrap();
    let x = tensor(4, 3, (0..12).map(|i| (i as f64 * 0.37).sin()).collect());
    let r = finite_diff_check_params(
        &store,
        |t, s| {
            let y = mlp.forward(t, s, t.constant(x.clone()))?;
            Ok(y.square()?.sum())
        },
        1e-4,
        1,
    )
    .unwrap();
    assert!(r.passed, "{r:?}");
    assert_eq!(r.checked, store.num_values());
}

#[test]
fn sum_function_gradient_is_exact() {
    let x = tensor(2, 3, vec![0.1, -0.4, 0.9, 0.0, 0.5, -1.0]);
    let r = finite_diff_check(|_, v| Ok(v.sum()), &x, 1e-4).unwrap();
    assert!(r.max_abs_err < 1e-8);
}
