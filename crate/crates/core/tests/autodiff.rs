//! Finite-difference validation of every recorded op.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rolecluster::tensor::{check_gradients, Matrix, OpKind, Tape, TensorError, Var};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Contracts an arbitrary-shape output with fixed random weights so that
/// every output entry contributes to the scalar.
fn contract(tape: &mut Tape, y: Var, seed: u64) -> Result<Var, TensorError> {
    let [r, c] = tape.shape(y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(random(&mut rng, r, c, -1.0, 1.0));
    tape.dot(y, w)
}

fn check_unary(kind: OpKind, rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(&mut rng, rows, cols, lo, hi);
    check_gradients(
        |tape, p| {
            let y = tape.record(kind.clone(), &[p[0]])?;
            contract(tape, y, seed + 1)
        },
        &[x],
        EPS,
    )
    .unwrap()
    .max_relative_error
}

fn check_binary(kind: OpKind, a: [usize; 2], b: [usize; 2], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(&mut rng, a[0], a[1], -1.0, 1.0);
    let y = random(&mut rng, b[0], b[1], -1.0, 1.0);
    check_gradients(
        |tape, p| {
            let out = tape.record(kind.clone(), &[p[0], p[1]])?;
            contract(tape, out, seed + 1)
        },
        &[x, y],
        EPS,
    )
    .unwrap()
    .max_relative_error
}

#[test]
fn unary_ops_match_finite_differences() {
    let cases: Vec<(OpKind, f64, f64)> = vec![
        (OpKind::ScalarMul(-1.7), -1.0, 1.0),
        (OpKind::Relu, -1.0, 1.0),
        (OpKind::LeakyRelu(0.2), -1.0, 1.0),
        (OpKind::Sigmoid, -1.0, 1.0),
        (OpKind::Tanh, -1.0, 1.0),
        (OpKind::Exp, -1.0, 1.0),
        (OpKind::Log, 0.05, 1.0),
        (OpKind::RowSoftmax, -1.0, 1.0),
        (OpKind::RowSum, -1.0, 1.0),
        (OpKind::SumAll, -1.0, 1.0),
        (OpKind::L2NormSq, -1.0, 1.0),
        (OpKind::Transpose, -1.0, 1.0),
        (OpKind::SliceRows { start: 1, end: 3 }, -1.0, 1.0),
        (OpKind::NormalizeRows, -1.0, 1.0),
        (OpKind::GatherRows(Arc::from(vec![3, 0, 0, 2])), -1.0, 1.0),
        (
            OpKind::ScatterAddRows {
                index: Arc::from(vec![1, 1, 0, 2]),
                rows: 3,
            },
            -1.0,
            1.0,
        ),
        (
            OpKind::EdgeInnerSum {
                src: Arc::from(vec![0, 1, 2, 0]),
                dst: Arc::from(vec![1, 2, 3, 3]),
            },
            -1.0,
            1.0,
        ),
    ];
    for (seed, (kind, lo, hi)) in cases.into_iter().enumerate() {
        let err = check_unary(kind.clone(), 4, 3, lo, hi, seed as u64 * 7 + 1);
        assert!(err < TOL, "{kind:?}: relative error {err}");
    }
}

#[test]
fn segment_softmax_matches_finite_differences() {
    let kind = OpKind::SegmentSoftmax(Arc::from(vec![0, 0, 1, 2, 2, 2]));
    let err = check_unary(kind, 6, 1, -1.0, 1.0, 99);
    assert!(err < TOL, "relative error {err}");
}

#[test]
fn binary_ops_match_finite_differences() {
    let cases = [
        (OpKind::MatMul, [3, 4], [4, 2]),
        (OpKind::Add, [3, 4], [3, 4]),
        (OpKind::Sub, [3, 4], [3, 4]),
        (OpKind::Hadamard, [3, 4], [3, 4]),
        (OpKind::Dot, [3, 4], [3, 4]),
        (OpKind::ConcatRows, [2, 3], [4, 3]),
        (OpKind::AddRowBroadcast, [3, 4], [1, 4]),
        (OpKind::MulColBroadcast, [3, 4], [3, 1]),
    ];
    for (seed, (kind, a, b)) in cases.into_iter().enumerate() {
        let err = check_binary(kind.clone(), a, b, seed as u64 * 13 + 5);
        assert!(err < TOL, "{kind:?}: relative error {err}");
    }
}

#[test]
fn quadratic_loss_gradient_is_tight() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, 5, 2, -1.0, 1.0);
    let report = check_gradients(
        |tape, p| {
            let s = tape.scalar_mul(p[0], 0.5)?;
            tape.l2norm_sq(s)
        },
        &[x],
        1e-5,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-6, "{report:?}");
}

#[test]
fn non_finite_loss_is_rejected() {
    let err = check_gradients(
        |tape, p| {
            let big = tape.scalar_mul(p[0], 1e6)?;
            let e = tape.exp(big)?;
            tape.sum_all(e)
        },
        &[Matrix::scalar(1.0)],
        1e-5,
    )
    .unwrap_err();
    assert!(matches!(err, TensorError::NonFinite(_)));
}

#[test]
fn backward_is_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut tape = Tape::new();
    let w = tape.param(random(&mut rng, 4, 4, -1.0, 1.0));
    let x = tape.constant(random(&mut rng, 6, 4, -1.0, 1.0));
    let h = tape.matmul(x, w).unwrap();
    let h = tape.tanh(h).unwrap();
    let s = tape.row_softmax(h).unwrap();
    let l = tape.log(s).unwrap();
    let loss = tape.sum_all(l).unwrap();
    let g1 = tape.backward(loss).unwrap();
    let g2 = tape.backward(loss).unwrap();
    let bits = |g: &rolecluster::tensor::Gradients| -> Vec<u64> {
        g.get(w)
            .unwrap()
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect()
    };
    assert_eq!(bits(&g1), bits(&g2));
}

#[test]
fn detached_branch_carries_zero_gradient() {
    let mut tape = Tape::new();
    let a = tape.param(Matrix::row_vector(vec![0.4, -0.3]));
    let b = tape.param(Matrix::row_vector(vec![1.0, 2.0]));
    let bd = tape.detach(b);
    let y = tape.dot(a, bd).unwrap();
    let g = tape.backward(y).unwrap();
    assert!(g.get(b).unwrap().data().iter().all(|&v| v == 0.0));
    assert_eq!(g.get(a).unwrap().data(), &[1.0, 2.0]);
}
