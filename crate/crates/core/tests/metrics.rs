use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rolecluster::graph::{DynamicGraph, Snapshot};
use rolecluster::metrics::{
    conductance, evaluate_partitions, modularity, nf1, nmi, rcs, MetricError, Partition,
};
use rolecluster::tensor::Matrix;

fn part(labels: &[usize]) -> Partition {
    Partition {
        labels: labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (format!("n{i:03}"), l))
            .collect(),
    }
}

fn snapshot(t: usize, n: usize, edges: &[(usize, usize)]) -> Snapshot {
    Snapshot::new(
        t,
        (0..n).map(|i| format!("n{i}")).collect(),
        edges.to_vec(),
        None,
        None,
    )
    .unwrap()
}

fn clique_edges(nodes: std::ops::Range<usize>) -> Vec<(usize, usize)> {
    let v: Vec<usize> = nodes.collect();
    let mut out = Vec::new();
    for (i, &a) in v.iter().enumerate() {
        for &b in &v[i + 1..] {
            out.push((a, b));
        }
    }
    out
}

/// Textbook NMI from the contingency table, written independently.
fn nmi_reference(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![vec![0.0; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1.0;
    }
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..kb).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let h = |v: &[f64]| -> f64 {
        v.iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| -(c / n) * (c / n).ln())
            .sum()
    };
    let mut mi = 0.0;
    for i in 0..ka {
        for j in 0..kb {
            if table[i][j] > 0.0 {
                mi += table[i][j] / n * (n * table[i][j] / (rows[i] * cols[j])).ln();
            }
        }
    }
    let (ha, hb) = (h(&rows), h(&cols));
    if ha == 0.0 && hb == 0.0 {
        1.0
    } else if ha == 0.0 || hb == 0.0 {
        0.0
    } else {
        2.0 * mi / (ha + hb)
    }
}

#[test]
fn nmi_examples() {
    assert!((nmi(&part(&[0, 0, 1, 1]), &part(&[0, 0, 1, 1])).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(
        nmi(&part(&[0, 1, 2, 3]), &part(&[0, 0, 0, 0])).unwrap(),
        0.0
    );
    assert!(
        nmi(&part(&[0, 0, 1, 1]), &part(&[0, 1, 0, 1]))
            .unwrap()
            .abs()
            < 1e-12
    );
    assert_eq!(nmi(&part(&[0, 0, 0]), &part(&[5, 5, 5])).unwrap(), 1.0);
}

#[test]
fn nmi_rejects_different_node_sets() {
    let a = part(&[0, 1]);
    let mut b = part(&[0, 1]);
    b.labels.insert("extra".into(), 0);
    assert!(matches!(nmi(&a, &b), Err(MetricError::NodeSetMismatch)));
    let c = Partition {
        labels: [("x".to_string(), 0), ("y".to_string(), 1)]
            .into_iter()
            .collect(),
    };
    assert!(matches!(nmi(&a, &c), Err(MetricError::NodeSetMismatch)));
}

#[test]
fn nf1_examples() {
    let r = nf1(&part(&[0, 0, 1, 1, 2, 2]), &part(&[3, 3, 4, 4, 5, 5])).unwrap();
    assert!((r.nf1 - 1.0).abs() < 1e-12 && (r.mean_f1 - 1.0).abs() < 1e-12);

    for k in 2..6usize {
        let truth: Vec<usize> = (0..6 * k).map(|i| i / 6).collect();
        let r = nf1(&part(&vec![0; 6 * k]), &part(&truth)).unwrap();
        let expected = 2.0 / (k as f64 + 1.0);
        assert!((r.mean_f1 - expected).abs() < 1e-12);
        assert!((r.quality - expected).abs() < 1e-12);
        assert!((r.coverage - 1.0 / k as f64).abs() < 1e-12);
        assert!((r.nf1 - expected / k as f64).abs() < 1e-12);
    }
}

#[test]
fn nf1_is_directed() {
    // two predictions split one truth community: redundancy 2 on one side only
    let pred = part(&[0, 0, 1, 1, 2, 2, 2, 2]);
    let truth = part(&[0, 0, 0, 0, 1, 1, 1, 1]);
    let forward = nf1(&pred, &truth).unwrap();
    let backward = nf1(&truth, &pred).unwrap();
    assert!((forward.redundancy - 1.5).abs() < 1e-12);
    assert!((forward.nf1 - backward.nf1).abs() > 1e-3);
    assert!(matches!(
        nf1(&Partition::default(), &Partition::default()),
        Err(MetricError::EmptyTruth)
    ));
}

#[test]
fn modularity_examples() {
    let mut edges = clique_edges(0..4);
    edges.extend(clique_edges(4..8));
    let snap = snapshot(0, 8, &edges);
    assert!((modularity(&snap, &[0, 0, 0, 0, 1, 1, 1, 1]) - 0.5).abs() < 1e-12);
    assert!(modularity(&snap, &[0; 8]).abs() < 1e-12);
    assert_eq!(modularity(&snapshot(0, 3, &[]), &[0, 1, 2]), 0.0);
}

#[test]
fn conductance_examples() {
    let mut edges = clique_edges(0..3);
    edges.extend(clique_edges(3..6));
    assert_eq!(
        conductance(&snapshot(0, 6, &edges), &[0, 0, 0, 1, 1, 1]),
        0.0
    );

    let star = snapshot(0, 4, &[(0, 1), (0, 2), (0, 3)]);
    // community {0}: cut 3, vol 3, other side vol 3 -> 1
    let c = conductance(&star, &[0, 1, 1, 1]);
    assert!((c - 1.0).abs() < 1e-12);

    let cycle = snapshot(0, 4, &[(0, 1), (1, 2), (2, 3), (0, 3)]);
    assert!((conductance(&cycle, &[0, 0, 1, 1]) - 0.5).abs() < 1e-12);
}

fn chain(n_snaps: usize, n: usize) -> DynamicGraph {
    DynamicGraph::new((0..n_snaps).map(|t| snapshot(t, n, &[])).collect()).unwrap()
}

fn one_hot(n: usize, role: impl Fn(usize) -> usize) -> Matrix {
    let mut m = Matrix::zeros(n, 5);
    for i in 0..n {
        m.set(i, role(i), 1.0);
    }
    m
}

#[test]
fn rcs_examples() {
    let g = chain(4, 3);
    let frozen = vec![one_hot(3, |i| i % 5); 4];
    let r = rcs(&g, &frozen).unwrap();
    assert_eq!((r.raw, r.normalized), (1.0, 1.0));

    let flipping: Vec<Matrix> = (0..4).map(|t| one_hot(3, move |i| (i + t) % 5)).collect();
    let r = rcs(&g, &flipping).unwrap();
    assert_eq!((r.raw, r.normalized), (-1.0, 0.0));

    let g = chain(2, 1);
    let a = Matrix::from_rows(&[vec![0.5, 0.5, 0.0, 0.0, 0.0]]).unwrap();
    let b = Matrix::from_rows(&[vec![0.6, 0.4, 0.0, 0.0, 0.0]]).unwrap();
    let r = rcs(&g, &[a, b]).unwrap();
    assert!((r.raw - 0.8).abs() < 1e-12);

    assert!(matches!(
        rcs(&chain(1, 2), &[one_hot(2, |_| 0)]),
        Err(MetricError::TooFewSnapshots)
    ));
}

#[test]
fn report_means() {
    let mut edges = clique_edges(0..4);
    edges.extend(clique_edges(4..8));
    let g = DynamicGraph::new(vec![snapshot(0, 8, &edges), snapshot(1, 8, &edges)]).unwrap();
    let truth = vec![vec![0, 0, 0, 0, 1, 1, 1, 1]; 2];
    let pred = vec![vec![1, 1, 1, 1, 0, 0, 0, 0], vec![0; 8]];
    let r = evaluate_partitions(&g, &pred, Some(&truth)).unwrap();
    assert_eq!(r.mean_nmi, Some(0.5));
    assert!((r.mean_modularity - 0.25).abs() < 1e-12);
    assert!(evaluate_partitions(&g, &pred[..1], None).is_err());
}

fn random_labels(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

fn relabel(labels: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..k).map(|x| x * 7 + 3).collect();
    for i in (1..k).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    labels.iter().map(|&l| perm[l]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn nmi_matches_reference_and_is_symmetric(seed in 0u64..100_000, n in 2usize..40, ka in 1usize..6, kb in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_labels(n, ka, &mut rng);
        let b = random_labels(n, kb, &mut rng);
        let v = nmi(&part(&a), &part(&b)).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((v - nmi(&part(&b), &part(&a)).unwrap()).abs() < 1e-12);
        prop_assert!((v - nmi_reference(&a, &b)).abs() < 1e-9);
    }

    #[test]
    fn metrics_ignore_community_ids(seed in 0u64..100_000, n in 3usize..30, k in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_labels(n, k, &mut rng);
        let b = random_labels(n, k, &mut rng);
        let a2 = relabel(&a, k, &mut rng);
        let b2 = relabel(&b, k, &mut rng);
        prop_assert!((nmi(&part(&a), &part(&b)).unwrap() - nmi(&part(&a2), &part(&b2)).unwrap()).abs() < 1e-12);
        prop_assert!((nf1(&part(&a), &part(&b)).unwrap().nf1 - nf1(&part(&a2), &part(&b2)).unwrap().nf1).abs() < 1e-12);

        let mut edges = Vec::new();
        for x in 0..n {
            for y in x + 1..n {
                if rng.random::<f64>() < 0.3 {
                    edges.push((x, y));
                }
            }
        }
        let snap = snapshot(0, n, &edges);
        let q = modularity(&snap, &a);
        prop_assert!((-0.5..=1.0).contains(&q));
        prop_assert!((q - modularity(&snap, &a2)).abs() < 1e-12);
        let c = conductance(&snap, &a);
        prop_assert!((0.0..=1.0).contains(&c));
        prop_assert!((c - conductance(&snap, &a2)).abs() < 1e-12);
    }
}
