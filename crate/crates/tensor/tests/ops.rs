use phenocast_tensor::gradcheck::{self, relative_error};
use phenocast_tensor::{rng, Adam, Tape, Tensor, TensorError, Var};
use proptest::prelude::*;
use rand::Rng;

fn random(shape: Vec<usize>, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn matmul_identity_and_zero() {
    let mut tape = Tape::new();
    let a = Tensor::from_fn(vec![3, 3], |i| i as f64 - 4.0);
    let eye = tape.leaf(&Tensor::identity(3));
    let av = tape.leaf(&a);
    let out = tape.matmul(eye, av).unwrap();
    assert_eq!(tape.value(out), a.data());

    let x = tape.leaf(&Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let z = tape.leaf(&Tensor::zeros(vec![2, 1]));
    let out = tape.matmul(x, z).unwrap();
    assert_eq!(tape.shape(out), &[2, 1]);
    assert_eq!(tape.value(out), &[0.0, 0.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.leaf(&Tensor::zeros(vec![2, 3]));
    let b = tape.leaf(&Tensor::zeros(vec![4, 2]));
    let err = tape.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        TensorError::ShapeMismatch {
            op: "matmul",
            left: vec![2, 3],
            right: vec![4, 2]
        }
    );
    assert!(err.to_string().contains("[2, 3]") && err.to_string().contains("[4, 2]"));
}

#[test]
fn matmul_gradient_of_sum_is_ones_times_b_transposed() {
    let mut r = rng::stream(11, 0);
    let a = random(vec![4, 5], &mut r).with_grad();
    let b = random(vec![5, 3], &mut r);
    let mut tape = Tape::new();
    let (av, bv) = (tape.leaf(&a), tape.leaf(&b));
    let c = tape.matmul(av, bv).unwrap();
    let loss = tape.sum(c);
    tape.backward(loss).unwrap();
    let grad = tape.grad(av).unwrap();
    // Central differences, h = 1e-5.
    let h = 1e-5;
    let f = |a: &Tensor| -> f64 {
        let mut s = 0.0;
        for i in 0..4 {
            for j in 0..3 {
                for l in 0..5 {
                    s += a.at(i, l) * b.at(l, j);
                }
            }
        }
        s
    };
    for idx in 0..20 {
        let mut up = a.clone();
        up.data_mut()[idx] += h;
        let mut down = a.clone();
        down.data_mut()[idx] -= h;
        let numeric = (f(&up) - f(&down)) / (2.0 * h);
        assert!((grad[idx] - numeric).abs() < 1e-8);
        // ones(4×3)·bᵀ: every row equals the row sums of b.
        let l = idx % 5;
        let row_sum: f64 = (0..3).map(|j| b.at(l, j)).sum();
        assert!((grad[idx] - row_sum).abs() < 1e-12);
    }
}

#[test]
fn softmax_golden_values() {
    let mut tape = Tape::new();
    let x = tape.constant(vec![3], vec![0.0, 0.0, 0.0]).unwrap();
    let y = tape.softmax(x, 0).unwrap();
    assert!(close(tape.value(y), &[1.0 / 3.0; 3], 1e-15));

    let c = 0.7;
    let x = tape.constant(vec![2], vec![1.3, 1.3 + c]).unwrap();
    let y = tape.softmax(x, 0).unwrap();
    let e = f64::exp(c);
    assert!(close(tape.value(y), &[1.0 / (1.0 + e), e / (1.0 + e)], 1e-15));

    // 40-digit evaluation of exp(i)/Σexp for i = 1, 2, 3.
    let x = tape.constant(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
    let y = tape.softmax(x, 0).unwrap();
    let want = [0.0900305731703804579980221, 0.2447284710547976524729596, 0.6652409557748218895290183];
    assert!(close(tape.value(y), &want, 1e-15));
}

#[test]
fn softmax_along_either_axis_of_a_matrix() {
    let mut tape = Tape::new();
    let data: Vec<f64> = (0..6).map(|i| i as f64 * 0.3).collect();
    let x = tape.constant(vec![2, 3], data).unwrap();
    let rows = tape.softmax(x, 1).unwrap();
    let cols = tape.softmax(x, 0).unwrap();
    let r = tape.value(rows);
    assert!((r[0] + r[1] + r[2] - 1.0).abs() < 1e-12);
    let c = tape.value(cols);
    assert!((c[0] + c[3] - 1.0).abs() < 1e-12);
    assert!(matches!(tape.softmax(x, 2), Err(TensorError::InvalidAxis { .. })));
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::new();
    let g = tape.leaf(&Tensor::ones(vec![4]));
    let b = tape.leaf(&Tensor::zeros(vec![4]));
    let x = tape.constant(vec![1, 4], vec![2.5; 4]).unwrap();
    let y = tape.layer_norm(x, g, b).unwrap();
    assert_eq!(tape.value(y), &[0.0; 4]);

    let g2 = tape.leaf(&Tensor::ones(vec![2]));
    let b2 = tape.leaf(&Tensor::zeros(vec![2]));
    let x = tape.constant(vec![1, 2], vec![1.0, -1.0]).unwrap();
    let y = tape.layer_norm(x, g2, b2).unwrap();
    let s = 1.0 / (1.0f64 + 1e-5).sqrt();
    assert!(close(tape.value(y), &[s, -s], 1e-15));
    assert!(close(tape.value(y), &[1.0, -1.0], 1e-5));

    let mut r = rng::stream(3, 0);
    let row = random(vec![1, 16], &mut r);
    let g16 = tape.leaf(&Tensor::ones(vec![16]));
    let b16 = tape.leaf(&Tensor::zeros(vec![16]));
    let x = tape.leaf(&row);
    let y = tape.layer_norm(x, g16, b16).unwrap();
    let v = tape.value(y);
    let mean = v.iter().sum::<f64>() / 16.0;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 16.0;
    assert!(mean.abs() < 1e-9);
    assert!((var - 1.0).abs() < 1e-4);

    assert!(tape.layer_norm(x, g2, b16).is_err());
}

#[test]
fn relu_and_dropout() {
    let mut tape = Tape::new();
    let x = tape.constant(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
    let y = tape.relu(x);
    assert_eq!(tape.value(y), &[0.0, 0.0, 2.0]);

    let mut r = rng::stream(5, 0);
    let x = tape.leaf(&random(vec![7, 3], &mut r));
    let same = tape.dropout(x, 0.2, false, &mut r).unwrap();
    assert_eq!(same, x);

    let ones = tape.constant(vec![100_000], vec![1.0; 100_000]).unwrap();
    let d = tape.dropout(ones, 0.2, true, &mut r).unwrap();
    let vals = tape.value(d);
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    assert!(vals.iter().all(|&v| v == 0.0 || v == 1.25));

    assert!(matches!(tape.dropout(x, 1.0, true, &mut r), Err(TensorError::Config(_))));
    assert!(tape.dropout(x, -0.1, false, &mut r).is_err());
}

#[test]
fn backward_basics_and_accumulation() {
    let x = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap().with_grad();
    let mut tape = Tape::new();
    let xv = tape.leaf(&x);
    let s = tape.sum(xv);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(xv).unwrap(), &[1.0, 1.0, 1.0]);

    let mut tape = Tape::new();
    let xv = tape.leaf(&x);
    let sq = tape.mul(xv, xv).unwrap();
    let s = tape.sum(sq);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(xv).unwrap(), &[2.0, -4.0, 1.0]);
    // A second call accumulates.
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(xv).unwrap(), &[4.0, -8.0, 2.0]);
    tape.zero_grad();
    assert!(tape.grad(xv).is_none());

    let mut target = x.clone();
    tape.backward(s).unwrap();
    tape.accumulate_into(xv, &mut target).unwrap();
    assert_eq!(target.grad().unwrap(), &[2.0, -4.0, 1.0]);
}

#[test]
fn backward_rejects_non_scalar_and_fills_unused_leaves() {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::ones(vec![2]).with_grad());
    let unused = tape.leaf(&Tensor::ones(vec![5]).with_grad());
    assert!(matches!(tape.backward(x), Err(TensorError::Contract(_))));
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(unused).unwrap(), &[0.0; 5]);
}

type Build = fn(&mut Tape, &[Var]) -> phenocast_tensor::Result<Var>;

/// Every differentiable op, each reduced to a scalar through a fixed random
/// projection so that all output entries contribute.
fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Build)> {
    fn project(tape: &mut Tape, y: Var) -> phenocast_tensor::Result<Var> {
        let n = tape.value(y).len();
        let w: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.4).collect();
        let p = tape.mul_const(y, w)?;
        Ok(tape.sum(p))
    }
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            project(t, y)
        }),
        ("add_sub_mul", vec![vec![2, 3], vec![2, 3]], |t, v| {
            let a = t.add(v[0], v[1])?;
            let s = t.sub(a, v[1])?;
            let y = t.mul(s, v[1])?;
            project(t, y)
        }),
        ("add_row", vec![vec![3, 4], vec![4]], |t, v| {
            let y = t.add_row(v[0], v[1])?;
            project(t, y)
        }),
        ("scale_const", vec![vec![5]], |t, v| {
            let a = t.scale(v[0], -1.7);
            let b = t.add_const(a, &[0.1, 0.2, 0.3, 0.4, 0.5])?;
            project(t, b)
        }),
        ("square_abs", vec![vec![6]], |t, v| {
            let shifted = t.add_const(v[0], &[3.0; 6])?;
            let a = t.abs(shifted);
            let y = t.square(a);
            project(t, y)
        }),
        ("relu", vec![vec![8]], |t, v| {
            let y = t.relu(v[0]);
            project(t, y)
        }),
        ("softmax_rows", vec![vec![3, 5]], |t, v| {
            let y = t.softmax(v[0], 1)?;
            project(t, y)
        }),
        ("softmax_cols", vec![vec![3, 5]], |t, v| {
            let y = t.softmax(v[0], 0)?;
            project(t, y)
        }),
        ("layer_norm", vec![vec![3, 6], vec![6], vec![6]], |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2])?;
            project(t, y)
        }),
        ("transpose", vec![vec![2, 5]], |t, v| {
            let y = t.transpose(v[0])?;
            project(t, y)
        }),
        ("slice_concat", vec![vec![3, 6], vec![3, 2]], |t, v| {
            let a = t.slice_cols(v[0], 1, 3)?;
            let b = t.concat_cols(&[a, v[1], a])?;
            let c = t.concat_rows(&[b, b])?;
            let r = t.row(c, 4)?;
            let m = t.mean(c);
            let rs = t.sum(r);
            let s = t.add(m, rs)?;
            let p = project(t, c)?;
            t.add(s, p)
        }),
    ]
}

#[test]
fn every_op_passes_finite_difference_check_over_20_seeds() {
    for (name, shapes, build) in op_cases() {
        for seed in 0..20u64 {
            let mut r = rng::stream(seed, 99);
            let mut params: Vec<Tensor> = shapes.iter().map(|s| random(s.clone(), &mut r)).collect();
            let report = gradcheck::check(&mut params, 1e-5, 1e-8, build).unwrap();
            assert!(
                report.passes(1e-3),
                "{name} seed {seed}: max rel error {} at {:?}",
                report.max_rel_error,
                report.worst
            );
        }
    }
}

#[test]
fn probes_across_a_kink_fall_back_to_one_side() {
    // entries 0 and 1 sit within one step of the ReLU kink
    let mut params = vec![Tensor::new(vec![1, 3], vec![3e-6, -4e-6, 0.5]).unwrap()];
    let f = |tape: &mut Tape, leaves: &[Var]| {
        let shifted = tape.add_const(leaves[0], &[1.0; 3])?;
        let sq = tape.square(shifted);
        let r = tape.relu(leaves[0]);
        let both = tape.add(sq, r)?;
        Ok(tape.sum(both))
    };
    let report = gradcheck::check(&mut params, 1e-5, 1e-8, f).unwrap();
    assert_eq!((report.one_sided, report.straddled), (2, 0));
    assert!(report.passes(1e-3), "{report:?}");

    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::new(vec![1, 3], vec![3e-6, -4e-6, 0.5]).unwrap().with_grad());
    let r = tape.relu(x);
    assert_eq!(tape.branch_pattern(), vec![true, false, true]);
    let s = tape.sum(r);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 1.0]);
}

#[test]
fn relative_error_floor() {
    assert_eq!(relative_error(1.0, 1.0, 1e-8), 0.0);
    assert!((relative_error(2.0, 1.0, 1e-8) - 0.5).abs() < 1e-15);
    assert!((relative_error(0.0, 1e-12, 1e-8) - 1e-4).abs() < 1e-15);
}

#[test]
fn adam_with_tape_gradients_minimizes_a_quadratic() {
    let mut params = vec![Tensor::new(vec![2], vec![5.0, -5.0]).unwrap().with_grad()];
    let mut adam = Adam::new(0.05).unwrap();
    for _ in 0..2000 {
        let mut tape = Tape::new();
        let p = tape.leaf(&params[0]);
        let sq = tape.square(p);
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        params[0].zero_grad();
        tape.accumulate_into(p, &mut params[0]).unwrap();
        adam.step(&mut params).unwrap();
    }
    let norm = params[0].data().iter().map(|p| p * p).sum::<f64>().sqrt();
    assert!(norm < 1e-2, "norm {norm}");
}

fn matrix(n: usize, m: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0f64..2.0, n * m).prop_map(move |d| Tensor::new(vec![n, m], d).unwrap())
}

proptest! {
    #[test]
    fn matmul_is_associative_with_identity(
        (a, b, c) in (1usize..=8, 1usize..=8, 1usize..=8, 1usize..=8)
            .prop_flat_map(|(m, k, n, p)| (matrix(m, k), matrix(k, n), matrix(n, p)))
    ) {
        let mut tape = Tape::new();
        let (av, bv, cv) = (tape.leaf(&a), tape.leaf(&b), tape.leaf(&c));
        let ab = tape.matmul(av, bv).unwrap();
        let left = tape.matmul(ab, cv).unwrap();
        let bc = tape.matmul(bv, cv).unwrap();
        let right = tape.matmul(av, bc).unwrap();
        prop_assert!(close(tape.value(left), tape.value(right), 1e-10));
        let eye = tape.leaf(&Tensor::identity(a.shape()[1]));
        let ai = tape.matmul(av, eye).unwrap();
        prop_assert_eq!(tape.value(ai), a.data());
    }

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(
        row in prop::collection::vec(-30.0f64..30.0, 1..12),
        shift in -50.0f64..50.0,
    ) {
        let mut tape = Tape::new();
        let n = row.len();
        let x = tape.constant(vec![n], row.clone()).unwrap();
        let y = tape.softmax(x, 0).unwrap();
        let shifted = tape.add_const(x, &vec![shift; n]).unwrap();
        let ys = tape.softmax(shifted, 0).unwrap();
        let total: f64 = tape.value(y).iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(tape.value(y).iter().all(|&p| p > 0.0));
        prop_assert!(close(tape.value(y), tape.value(ys), 1e-12));
    }

    #[test]
    fn eval_dropout_is_bitwise_identity(data in prop::collection::vec(-1e6f64..1e6, 1..64), seed in any::<u64>()) {
        let mut tape = Tape::new();
        let x = tape.constant(vec![data.len()], data.clone()).unwrap();
        let y = tape.dropout(x, 0.2, false, &mut rng::stream(seed, 0)).unwrap();
        let bits: Vec<u64> = tape.value(y).iter().map(|v| v.to_bits()).collect();
        let want: Vec<u64> = data.iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(bits, want);
    }
}
