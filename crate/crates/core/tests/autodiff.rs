use gatedtab::autodiff::{
    grad_check, grad_check_many, AutodiffError, Graph, Op, OpKind, Tensor, Var,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero so piecewise-linear ops stay off their kink.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..2.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Contracts an arbitrary tensor to a scalar with fixed random weights, so
/// gradients are not all equal.
fn weighted_sum(g: &mut Graph, x: Var, seed: u64) -> Result<Var, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, g.shape(x), -1.0, 1.0);
    let w = g.constant(w);
    let p = g.mul(x, w)?;
    Ok(g.sum_all(p))
}

#[test]
fn softmax_of_uniform_logits_is_uniform() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![0.0; 4]));
    let y = g.softmax(x);
    assert_eq!(g.value(y).data(), &[0.25, 0.25, 0.25, 0.25]);
}

#[test]
fn matmul_by_identity_is_identity() {
    let mut g = Graph::new();
    let a = Tensor::matrix(2, 3, vec![1.0, -2.0, 3.5, 0.25, 7.0, -1.0]).unwrap();
    let mut eye = Tensor::zeros(&[3, 3]);
    for i in 0..3 {
        eye.data_mut()[i * 4] = 1.0;
    }
    let av = g.constant(a.clone());
    let iv = g.constant(eye);
    let out = g.matmul(av, iv).unwrap();
    assert_eq!(g.value(out), &a);
}

#[test]
fn leaky_relu_negative_branch() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![-2.0, 3.0]));
    let y = g.leaky_relu(x, 0.05);
    assert!((g.value(y).data()[0] - -0.1).abs() < 1e-15);
    assert_eq!(g.value(y).data()[1], 3.0);
}

#[test]
fn backward_sum_of_squares() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum_all(sq);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
}

#[test]
fn backward_sigmoid_at_zero() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![0.0]));
    let s = g.sigmoid(x);
    let loss = g.sum_all(s);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.25]);
}

#[test]
fn fan_out_accumulates() {
    let mut g = Graph::new();
    let a = g.param(Tensor::scalar(1.5));
    let y = g.add(a, a).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(a).unwrap().data(), &[2.0]);
}

#[test]
fn backward_errors() {
    let g = Graph::new();
    let mut other = Graph::new();
    let v = other.param(Tensor::scalar(1.0));
    assert_eq!(g.backward(v).unwrap_err(), AutodiffError::EmptyGraph);

    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0]));
    let y = g.scale(x, 2.0);
    assert!(matches!(
        g.backward(y),
        Err(AutodiffError::NonScalarLoss(ref s)) if s == &vec![2]
    ));
}

#[test]
fn shape_mismatch_names_op_and_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");

    let c = g.constant(Tensor::zeros(&[4]));
    let err = g.add(a, c).unwrap_err();
    assert!(matches!(err, AutodiffError::ShapeMismatch { op: OpKind::Add, .. }));
}

#[test]
fn unknown_op_kind_is_rejected() {
    assert!(matches!(
        "conv2d".parse::<OpKind>(),
        Err(AutodiffError::UnknownOp(ref s)) if s == "conv2d"
    ));
    for kind in OpKind::ALL {
        assert_eq!(kind.name().parse::<OpKind>().unwrap(), kind);
    }
}

#[test]
fn apply_dispatches_and_checks_arity() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]));
    let parts = g
        .apply(&Op::Split { axis: 0, sizes: vec![1, 3] }, &[x])
        .unwrap();
    assert_eq!(parts.len(), 2);
    assert_eq!(g.value(parts[1]).data(), &[2.0, 3.0, 4.0]);
    let err = g.apply(&Op::Add, &[x]).unwrap_err();
    assert!(matches!(err, AutodiffError::InvalidArgument { op: OpKind::Add, .. }));
}

#[test]
fn dropout_identity_cases() {
    let mut g = Graph::with_seed(3);
    let x = g.constant(Tensor::vector(vec![1.0, -2.0, 3.0]));
    assert_eq!(g.dropout(x, 0.0, true).unwrap(), x);
    assert_eq!(g.dropout(x, 0.5, false).unwrap(), x);
    assert!(g.dropout(x, 1.0, true).is_err());
}

#[test]
fn dropout_scales_kept_units() {
    let mut g = Graph::with_seed(11);
    let x = g.constant(Tensor::full(&[10_000], 1.0));
    let y = g.dropout(x, 0.2, true).unwrap();
    let data = g.value(y).data();
    assert!(data.iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-15));
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    assert!((mean - 1.0).abs() < 0.03, "mean {mean}");
}

#[test]
fn embedding_rejects_out_of_range_ids() {
    let mut g = Graph::new();
    let t = g.param(Tensor::zeros(&[3, 2]));
    let err = g.embedding(t, &[0, 3], &[2]).unwrap_err();
    assert_eq!(
        err,
        AutodiffError::IndexOutOfRange {
            op: OpKind::EmbeddingLookup,
            index: 3,
            bound: 3
        }
    );
}

#[test]
fn bce_is_stable_for_large_logits() {
    let mut g = Graph::new();
    let z = g.param(Tensor::vector(vec![40.0, -40.0, 0.0]));
    let l = g.bce_with_logits(z, &[1.0, 0.0, 1.0]).unwrap();
    let v = g.value(l).item().unwrap();
    assert!((v - std::f64::consts::LN_2 / 3.0).abs() < 1e-12);
    let grads = g.backward(l).unwrap();
    assert!(grads.get(z).unwrap().is_finite());

    let mut g = Graph::new();
    let z = g.constant(Tensor::vector(vec![f64::NAN]));
    assert!(matches!(
        g.bce_with_logits(z, &[1.0]),
        Err(AutodiffError::NonFinite(_))
    ));
}

#[test]
fn grad_check_trivial_functions() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, &[8], 0.5, 1.5);
    let err = grad_check(
        |g, x| {
            let sq = g.mul(x, x)?;
            Ok(g.sum_all(sq))
        },
        &x,
        H,
    )
    .unwrap();
    assert!(err < 1e-7, "{err}");

    let err = grad_check(|g, _| Ok(g.constant(Tensor::scalar(3.0))), &x, H).unwrap();
    assert_eq!(err, 0.0);

    let nan = grad_check(
        |g, x| {
            let s = g.sum_all(x);
            let c = g.constant(Tensor::scalar(f64::NAN));
            g.mul(s, c)
        },
        &x,
        H,
    );
    assert!(matches!(nan, Err(AutodiffError::NonFinite(_))));
}

#[test]
fn random_three_layer_composite_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let x = random(&mut rng, &[3, 4], -1.0, 1.0);
        let w1 = random(&mut rng, &[4, 5], -1.0, 1.0);
        let w2 = random(&mut rng, &[5, 5], -1.0, 1.0);
        let w3 = random(&mut rng, &[5, 3], -1.0, 1.0);
        let err = grad_check_many(
            |g, v| {
                let h1 = g.matmul(v[0], v[1])?;
                let h1 = g.relu(h1);
                let h2 = g.matmul(h1, v[2])?;
                let h2 = g.softmax(h2);
                let h3 = g.matmul(h2, v[3])?;
                weighted_sum(g, h3, 99)
            },
            &[x, w1, w2, w3],
            H,
        )
        .unwrap();
        assert!(err < 1e-5, "relative error {err}");
    }
}

/// One random instance of every op kind, reduced to a scalar.
fn op_instance(kind: OpKind, rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var, AutodiffError>>) {
    let seed = rng.gen();
    match kind {
        OpKind::Matmul => {
            let a = random(rng, &[2, 3, 4], -1.0, 1.0);
            let b = random(rng, &[4, 2], -1.0, 1.0);
            (vec![a, b], Box::new(move |g, v| {
                let y = g.matmul(v[0], v[1])?;
                weighted_sum(g, y, seed)
            }))
        }
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            let a = random(rng, &[2, 3, 4], -1.0, 1.0);
            let b = random(rng, &[3, 1], -1.0, 1.0);
            (vec![a, b], Box::new(move |g, v| {
                let y = match kind {
                    OpKind::Add => g.add(v[0], v[1])?,
                    OpKind::Sub => g.sub(v[0], v[1])?,
                    _ => g.mul(v[0], v[1])?,
                };
                weighted_sum(g, y, seed)
            }))
        }
        OpKind::ScalarMul => unary(random(rng, &[5], -1.0, 1.0), seed, |g, x| Ok(g.scale(x, -1.7))),
        OpKind::TransposeLastTwo => unary(random(rng, &[2, 3, 4], -1.0, 1.0), seed, |g, x| g.transpose(x)),
        OpKind::SoftmaxLastDim => unary(random(rng, &[3, 5], -2.0, 2.0), seed, |g, x| Ok(g.softmax(x))),
        OpKind::Relu => unary(away_from_zero(rng, &[6]), seed, |g, x| Ok(g.relu(x))),
        OpKind::Gelu => unary(random(rng, &[6], -3.0, 3.0), seed, |g, x| Ok(g.gelu(x))),
        OpKind::Selu => unary(away_from_zero(rng, &[6]), seed, |g, x| Ok(g.selu(x))),
        OpKind::LeakyRelu => unary(away_from_zero(rng, &[6]), seed, |g, x| Ok(g.leaky_relu(x, 0.03))),
        OpKind::LayerNorm => unary(random(rng, &[3, 6], -2.0, 2.0), seed, |g, x| g.layer_norm(x, 1e-5)),
        OpKind::MeanLastDim => unary(random(rng, &[3, 4], -1.0, 1.0), seed, |g, x| Ok(g.mean_last_dim(x))),
        OpKind::Concat => {
            let a = random(rng, &[2, 2, 3], -1.0, 1.0);
            let b = random(rng, &[2, 1, 3], -1.0, 1.0);
            (vec![a, b], Box::new(move |g, v| {
                let y = g.concat(v, 1)?;
                weighted_sum(g, y, seed)
            }))
        }
        OpKind::Split => unary(random(rng, &[2, 5], -1.0, 1.0), seed, |g, x| {
            let parts = g.split(x, 1, &[2, 3])?;
            let a = g.mean_last_dim(parts[0]);
            let b = g.sum_all(parts[1]);
            let b = g.scale(b, 0.3);
            let a = g.sum_all(a);
            g.sub(a, b)
        }),
        OpKind::EmbeddingLookup => unary(random(rng, &[4, 3], -1.0, 1.0), seed, |g, t| {
            g.embedding(t, &[1, 3, 1, 0, 2, 1], &[2, 3])
        }),
        // Dropout has no smooth dependence on a seed; check the mask is honoured.
        OpKind::Dropout => unary(random(rng, &[8], -1.0, 1.0), seed, |g, x| g.dropout(x, 0.0, true)),
        OpKind::Sigmoid => unary(random(rng, &[6], -4.0, 4.0), seed, |g, x| Ok(g.sigmoid(x))),
        OpKind::Reshape => unary(random(rng, &[2, 6], -1.0, 1.0), seed, |g, x| g.reshape(x, &[3, 4])),
        OpKind::SumAll => unary(random(rng, &[2, 3], -1.0, 1.0), seed, |g, x| {
            let s = g.sum_all(x);
            g.mul(s, s)
        }),
        OpKind::MeanAll => unary(random(rng, &[2, 3], -1.0, 1.0), seed, |g, x| {
            let s = g.mean_all(x);
            g.mul(s, s)
        }),
        OpKind::BceWithLogits => {
            let z = random(rng, &[5, 1], -3.0, 3.0);
            let labels: Vec<f64> = (0..5).map(|_| f64::from(rng.gen_range(0u8..2))).collect();
            (vec![z], Box::new(move |g, v| g.bce_with_logits(v[0], &labels)))
        }
    }
}

type ScalarFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var, AutodiffError>>;

fn unary(
    x: Tensor,
    seed: u64,
    op: impl Fn(&mut Graph, Var) -> Result<Var, AutodiffError> + 'static,
) -> (Vec<Tensor>, ScalarFn) {
    (
        vec![x],
        Box::new(move |g, v| {
            let y = op(g, v[0])?;
            if g.value(y).numel() == 1 {
                Ok(y)
            } else {
                weighted_sum(g, y, seed)
            }
        }),
    )
}

#[test]
fn every_op_kind_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for kind in OpKind::ALL {
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let (inputs, f) = op_instance(kind, &mut rng);
            let err = grad_check_many(|g, v| f(g, v), &inputs, H).unwrap();
            worst = worst.max(err);
        }
        assert!(worst < 1e-5, "{kind}: relative error {worst}");
    }
}

#[test]
fn dropout_gradient_uses_the_mask() {
    let mut g = Graph::with_seed(5);
    let x = g.param(Tensor::full(&[64], 2.0));
    let y = g.dropout(x, 0.5, true).unwrap();
    let out = g.value(y).clone();
    let loss = g.sum_all(y);
    let grads = g.backward(loss).unwrap();
    for (gx, yv) in grads.get(x).unwrap().data().iter().zip(out.data()) {
        assert_eq!(*gx, yv / 2.0);
    }
}

#[test]
fn layer_norm_with_eps_shrinks_variance_by_known_factor() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(&mut rng, &[4, 7], -0.01, 0.01);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let eps = 1e-5;
    let y = g.layer_norm(xv, eps).unwrap();
    for (row_in, row_out) in x.data().chunks(7).zip(g.value(y).data().chunks(7)) {
        let m = row_in.iter().sum::<f64>() / 7.0;
        let v = row_in.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 7.0;
        let vo = row_out.iter().map(|a| a * a).sum::<f64>() / 7.0;
        assert!((vo - v / (v + eps)).abs() < 1e-9);
    }
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 5), 1..6)
    ) {
        let n = rows.len();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![n, 5], rows.concat()).unwrap());
        let y = g.softmax(x);
        for row in g.value(y).data().chunks(5) {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized(
        rows in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 6), 1..6)
    ) {
        let n = rows.len();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![n, 6], rows.concat()).unwrap());
        // eps = 0 isolates the normalization itself.
        let y = g.layer_norm(x, 0.0).unwrap();
        for (row, src) in g.value(y).data().chunks(6).zip(&rows) {
            let spread = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - src.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assume!(spread > 1e-6);
            let mean = row.iter().sum::<f64>() / 6.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 6.0;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn dropout_inactive_is_identity(data in prop::collection::vec(-10.0f64..10.0, 1..20), rate in 0.0f64..0.9) {
        let mut g = Graph::with_seed(1);
        let x = g.constant(Tensor::vector(data.clone()));
        let y = g.dropout(x, rate, false).unwrap();
        prop_assert_eq!(g.value(y).data(), data.as_slice());
    }
}
