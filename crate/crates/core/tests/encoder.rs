// The dense reference layer below mirrors the textbook index notation.
#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rolecluster::encoder::{
    decompose, gat_forward, gru_step, node_features, AttentionIndex, Encoder, EncoderConfig,
    EncoderError, EncoderVars, GatLayer, GruCell, OrthogonalDecomposer,
};
use rolecluster::graph::{DynamicGraph, Snapshot};
use rolecluster::tensor::{check_gradients, Matrix, Tape};

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.sample(StandardNormal))
            .collect(),
    )
    .unwrap()
}

fn snapshot(n: usize, edges: &[(usize, usize)]) -> Snapshot {
    Snapshot::new(
        0,
        (0..n).map(|i| format!("n{i}")).collect(),
        edges.to_vec(),
        None,
        None,
    )
    .unwrap()
}

fn run_gat(layer: &GatLayer, snap: &Snapshot, h: &Matrix) -> (Matrix, Vec<f64>) {
    let mut tape = Tape::new();
    let vars = layer.bind(&mut tape);
    let x = tape.constant(h.clone());
    let out = gat_forward(&mut tape, vars, layer.slope, &AttentionIndex::new(snap), x).unwrap();
    (
        tape.value(out.h).clone(),
        tape.value(out.alpha).data().to_vec(),
    )
}

/// Straight-line evaluation of attention with explicit loops.
fn dense_gat(layer: &GatLayer, snap: &Snapshot, h: &Matrix) -> Matrix {
    let n = snap.node_count();
    let d_out = layer.w.rows();
    let wh: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..d_out)
                .map(|o| {
                    (0..layer.w.cols())
                        .map(|k| layer.w.get(o, k) * h.get(i, k))
                        .sum()
                })
                .collect()
        })
        .collect();
    let leaky = |x: f64| if x > 0.0 { x } else { layer.slope * x };
    let mut out = Matrix::zeros(n, d_out);
    for i in 0..n {
        let mut hood: Vec<usize> = vec![i];
        hood.extend(snap.neighbors(i));
        let logits: Vec<f64> = hood
            .iter()
            .map(|&j| {
                let mut e = 0.0;
                for o in 0..d_out {
                    e += layer.a.get(o, 0) * wh[i][o] + layer.a.get(d_out + o, 0) * wh[j][o];
                }
                leaky(e)
            })
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|e| (e - m).exp()).sum();
        for (pos, &j) in hood.iter().enumerate() {
            let alpha = (logits[pos] - m).exp() / z;
            for o in 0..d_out {
                let v = out.get(i, o) + alpha * wh[j][o];
                out.set(i, o, v);
            }
        }
        for o in 0..d_out {
            out.set(i, o, out.get(i, o).max(0.0));
        }
    }
    out
}

#[test]
fn isolated_node_attends_to_itself() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let layer = GatLayer::new(3, 4, 0.2, &mut rng);
    let h = gaussian(1, 3, &mut rng);
    let (out, alpha) = run_gat(&layer, &snapshot(1, &[]), &h);
    assert_eq!(alpha, vec![1.0]);
    let expected = h.matmul(&layer.w.transpose()).unwrap().map(|v| v.max(0.0));
    for (a, b) in out.data().iter().zip(expected.data()) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn symmetric_nodes_get_identical_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let layer = GatLayer::new(2, 5, 0.2, &mut rng);
    let h = Matrix::from_rows(&[vec![0.3, -1.2], vec![0.3, -1.2]]).unwrap();
    let (out, _) = run_gat(&layer, &snapshot(2, &[(0, 1)]), &h);
    assert_eq!(out.row(0), out.row(1));
}

#[test]
fn path_matches_dense_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let layer = GatLayer::new(3, 4, 0.2, &mut rng);
    let snap = snapshot(4, &[(0, 1), (1, 2), (2, 3)]);
    let h = gaussian(4, 3, &mut rng);
    let (out, _) = run_gat(&layer, &snap, &h);
    let reference = dense_gat(&layer, &snap, &h);
    assert!(out.sub(&reference).frobenius_norm() < 1e-12);
}

fn run_gru(cell: &GruCell, h: &Matrix, s: &Matrix) -> Matrix {
    let mut tape = Tape::new();
    let vars = cell.bind(&mut tape);
    let x = tape.constant(h.clone());
    let s = tape.constant(s.clone());
    let out = gru_step(&mut tape, &vars, x, s).unwrap();
    tape.value(out).clone()
}

#[test]
fn gru_zero_in_zero_out() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cell = GruCell::new(4, 4, &mut rng);
    let out = run_gru(&cell, &Matrix::zeros(3, 4), &Matrix::zeros(3, 4));
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn gru_closed_update_gate_keeps_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut cell = GruCell::new(3, 3, &mut rng);
    cell.b_z = Matrix::filled(1, 3, -800.0);
    let h = gaussian(2, 3, &mut rng);
    let s = gaussian(2, 3, &mut rng);
    let out = run_gru(&cell, &h, &s);
    assert!(out.sub(&s).frobenius_norm() < 1e-12);
}

#[test]
fn gru_matches_gate_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cell = GruCell::new(3, 2, &mut rng);
    cell.b_z = gaussian(1, 2, &mut rng);
    cell.b_r = gaussian(1, 2, &mut rng);
    cell.b_n = gaussian(1, 2, &mut rng);
    let h = gaussian(1, 3, &mut rng);
    let s = gaussian(1, 2, &mut rng);
    let out = run_gru(&cell, &h, &s);

    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let lin =
        |w: &Matrix, v: &[f64], o: usize| -> f64 { (0..v.len()).map(|k| w.get(o, k) * v[k]).sum() };
    let (x, sp) = (h.row(0), s.row(0));
    for o in 0..2 {
        let z = sig(lin(&cell.w_z, x, o) + lin(&cell.u_z, sp, o) + cell.b_z.get(0, o));
        let r: Vec<f64> = (0..2)
            .map(|q| sig(lin(&cell.w_r, x, q) + lin(&cell.u_r, sp, q) + cell.b_r.get(0, q)) * sp[q])
            .collect();
        let n = (lin(&cell.w_n, x, o) + lin(&cell.u_n, &r, o) + cell.b_n.get(0, o)).tanh();
        let expected = (1.0 - z) * sp[o] + z * n;
        assert!((out.get(0, o) - expected).abs() < 1e-13);
    }
}

#[test]
fn decomposition_of_basis_row() {
    let basis = Matrix::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]]).unwrap();
    let dec = OrthogonalDecomposer::from_basis(basis.clone(), 1).unwrap();
    let (role, comm) = dec.project(&basis.slice_rows(0, 1)).unwrap();
    assert_eq!(role.data(), &[1.0]);
    assert_eq!(comm.data(), &[0.0]);
}

#[test]
fn reorthonormalize_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dec = OrthogonalDecomposer::new(12, 3, 6, &mut rng);
    assert!(dec.orthonormality_error() < 1e-12);

    let mut same = dec.clone();
    same.reorthonormalize(&mut rng);
    assert!(same.basis.sub(&dec.basis).frobenius_norm() < 1e-12);

    let mut doubled = dec.clone();
    doubled.basis = dec.basis.scale(2.0);
    doubled.reorthonormalize(&mut rng);
    assert!(doubled.orthonormality_error() < 1e-12);

    let mut noisy = dec.clone();
    for v in noisy.basis.data_mut() {
        *v += 0.01 * rng.sample::<f64, _>(StandardNormal);
    }
    assert!(noisy.cross_residual() > 1e-6);
    noisy.reorthonormalize(&mut rng);
    assert!(noisy.cross_residual() < 1e-8);
    assert!(noisy.orthonormality_error() < 1e-8);
}

#[test]
fn rank_deficient_row_is_reseeded() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let basis = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![2.0, 0.0, 0.0]]).unwrap();
    let mut dec = OrthogonalDecomposer::from_basis(basis, 1).unwrap();
    let warnings = dec.reorthonormalize(&mut rng);
    assert_eq!(warnings.len(), 1);
    assert!(dec.orthonormality_error() < 1e-12);
}

#[test]
fn role_loss_has_no_gradient_in_community_rows() {
    // L = L_role(W_role x) + L_comm(W_comm x): differentiate the role part
    // alone with respect to separately parameterized subspace blocks.
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let dec = OrthogonalDecomposer::new(8, 3, 4, &mut rng);
    let x = gaussian(5, 8, &mut rng);
    let role_loss = |tape: &mut Tape, p: &[rolecluster::tensor::Var]| {
        let basis = tape.concat_rows(&[p[0], p[1]])?;
        let xv = tape.constant(x.clone());
        let (role, _) = decompose(tape, basis, 3, xv)?;
        let t = tape.tanh(role)?;
        tape.sum_all(t)
    };
    let mut tape = Tape::new();
    let wr = tape.param(dec.w_role());
    let wc = tape.param(dec.w_comm());
    let out = role_loss(&mut tape, &[wr, wc]).unwrap();
    let grads = tape.backward(out).unwrap();
    assert!(grads.get(wc).unwrap().data().iter().all(|g| g.abs() < 1e-6));

    // finite differences agree that the community block is inert
    let eps = 1e-6;
    let base = tape.value(out).item();
    for e in 0..dec.w_comm().len() {
        let mut wc2 = dec.w_comm();
        wc2.data_mut()[e] += eps;
        let mut t2 = Tape::new();
        let a = t2.param(dec.w_role());
        let b = t2.param(wc2);
        let o = role_loss(&mut t2, &[a, b]).unwrap();
        assert!(((t2.value(o).item() - base) / eps).abs() < 1e-6);
    }
}

fn ring_graph(n: usize) -> DynamicGraph {
    let edges: Vec<(usize, usize)> = (0..n)
        .map(|i| (i, (i + 1) % n))
        .chain([(0, n / 2)])
        .collect();
    DynamicGraph::new(vec![snapshot(n, &edges)]).unwrap()
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let config = EncoderConfig {
        layers: 2,
        d_in: 4,
        d: 6,
        d_r: 2,
        d_c: 3,
        slope: 0.2,
    };
    let encoder = Encoder::new(config.clone(), 4).unwrap();
    let graph = ring_graph(6);
    let x = node_features(&graph, 0, 4, 9).unwrap();
    let index = AttentionIndex::new(graph.snapshot(0).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s_prev = gaussian(6, 6, &mut rng).scale(0.3);
    let params: Vec<Matrix> = encoder.parameters().into_iter().cloned().collect();
    let report = check_gradients(
        |tape, p| {
            let vars = EncoderVars::from_slice(config.layers, p).unwrap();
            let xv = tape.constant(x.clone());
            let sv = tape.constant(s_prev.clone());
            let enc = encoder
                .forward(tape, &vars, &index, xv, sv)
                .map_err(|e| match e {
                    EncoderError::Tensor(t) => t,
                    other => panic!("{other}"),
                })?;
            let a = tape.l2norm_sq(enc.z_comm)?;
            let b = tape.tanh(enc.z_role)?;
            let b = tape.sum_all(b)?;
            tape.add(a, b)
        },
        &params,
        1e-6,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

#[test]
fn generated_features_are_stable_per_id() {
    let graph = ring_graph(8);
    let a = node_features(&graph, 0, 10, 5).unwrap();
    let b = node_features(&graph, 0, 10, 5).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.row(0)[3..], a.row(1)[3..]);
    assert!(node_features(&graph, 0, 2, 5).is_err());
}

fn random_graph(n: usize, p: f64, seed: u64) -> Snapshot {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < p {
                edges.push((a, b));
            }
        }
    }
    snapshot(n, &edges)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn attention_is_a_distribution(n in 1usize..15, p in 0.0f64..1.0, seed in 0u64..1000) {
        let snap = random_graph(n, p, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = GatLayer::new(3, 4, 0.2, &mut rng);
        let h = gaussian(n, 3, &mut rng);
        let (_, alpha) = run_gat(&layer, &snap, &h);
        let index = AttentionIndex::new(&snap);
        let mut sums = vec![0.0; n];
        for (e, &i) in index.tgt.iter().enumerate() {
            prop_assert!(alpha[e] >= 0.0);
            sums[i] += alpha[e];
        }
        for s in sums {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_never_increases_norm(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dec = OrthogonalDecomposer::new(10, 3, 5, &mut rng);
        let s = gaussian(4, 10, &mut rng);
        let (r, c) = dec.project(&s).unwrap();
        for i in 0..4 {
            let total: f64 = r.row(i).iter().chain(c.row(i)).map(|v| v * v).sum();
            let own: f64 = s.row(i).iter().map(|v| v * v).sum();
            prop_assert!(total <= own + 1e-12);
        }
    }

    #[test]
    fn encoding_is_permutation_equivariant(seed in 0u64..200) {
        let n = 7;
        let snap = random_graph(n, 0.4, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        // node perm[i] of the relabeled snapshot is node i of the original
        let ids: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
        let mut new_ids = vec![String::new(); n];
        for i in 0..n {
            new_ids[perm[i]] = ids[i].clone();
        }
        let edges: Vec<(usize, usize)> = snap.edges().iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let relabeled = Snapshot::new(0, new_ids, edges, None, None).unwrap();
        let g1 = DynamicGraph::new(vec![snap]).unwrap();
        let g2 = DynamicGraph::new(vec![relabeled]).unwrap();

        let config = EncoderConfig { layers: 2, d_in: 5, d: 6, d_r: 2, d_c: 3, slope: 0.2 };
        let encoder = Encoder::new(config, seed).unwrap();
        let encode = |g: &DynamicGraph| {
            let mut tape = Tape::new();
            let vars = encoder.bind(&mut tape);
            let x = tape.constant(node_features(g, 0, 5, 1).unwrap());
            let s = tape.constant(Matrix::zeros(n, 6));
            let index = AttentionIndex::new(g.snapshot(0).unwrap());
            let enc = encoder.forward(&mut tape, &vars, &index, x, s).unwrap();
            tape.value(enc.state).clone()
        };
        let a = encode(&g1);
        let b = encode(&g2);
        for (i, &p) in perm.iter().enumerate() {
            for (x, y) in a.row(i).iter().zip(b.row(p)) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
