//! Partition quality (NMI, NF1, modularity, conductance) and
//! interpretability scores (role consistency, explanation fidelity).

mod fidelity;

pub use fidelity::{efs, ClaimVerifier};

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{DynamicGraph, GraphError, Snapshot};
use crate::tensor::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("partitions cover different node sets")]
    NodeSetMismatch,
    #[error("ground truth is empty")]
    EmptyTruth,
    #[error("role consistency needs at least two snapshots")]
    TooFewSnapshots,
    #[error("no nodes persist between consecutive snapshots")]
    NoPersistentNodes,
    #[error("no claims to verify")]
    NoClaims,
    #[error("sample size must be at least 1")]
    ZeroSample,
    #[error("{0}")]
    Misaligned(String),
}

/// Community labels of one snapshot keyed by node id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub labels: BTreeMap<String, usize>,
}

impl Partition {
    pub fn from_snapshot(snapshot: &Snapshot, labels: &[usize]) -> Result<Self, MetricError> {
        if labels.len() != snapshot.node_count() {
            return Err(MetricError::Misaligned(format!(
                "{} labels for {} nodes",
                labels.len(),
                snapshot.node_count()
            )));
        }
        Ok(Self {
            labels: snapshot
                .ids()
                .iter()
                .cloned()
                .zip(labels.iter().copied())
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Members per community id.
    pub fn communities(&self) -> BTreeMap<usize, Vec<&str>> {
        let mut out: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
        for (id, &l) in &self.labels {
            out.entry(l).or_default().push(id);
        }
        out
    }
}

fn aligned(a: &Partition, b: &Partition) -> Result<(Vec<usize>, Vec<usize>), MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::NodeSetMismatch);
    }
    let mut x = Vec::with_capacity(a.len());
    let mut y = Vec::with_capacity(a.len());
    for (id, &la) in &a.labels {
        let &lb = b.labels.get(id).ok_or(MetricError::NodeSetMismatch)?;
        x.push(la);
        y.push(lb);
    }
    Ok((x, y))
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with arithmetic-mean normalization.
/// Two single-cluster partitions score 1; exactly one scores 0.
pub fn nmi(a: &Partition, b: &Partition) -> Result<f64, MetricError> {
    let (x, y) = aligned(a, b)?;
    if x.is_empty() {
        return Err(MetricError::EmptyTruth);
    }
    let n = x.len() as f64;
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut ca: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cb: BTreeMap<usize, usize> = BTreeMap::new();
    for (&p, &q) in x.iter().zip(&y) {
        *joint.entry((p, q)).or_default() += 1;
        *ca.entry(p).or_default() += 1;
        *cb.entry(q).or_default() += 1;
    }
    let (ha, hb) = (
        entropy(ca.values().copied(), n),
        entropy(cb.values().copied(), n),
    );
    match (ca.len() == 1, cb.len() == 1) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let mut keys: Vec<_> = joint.iter().collect();
    keys.sort();
    let mut mi = 0.0;
    for (&(p, q), &c) in keys {
        let pxy = c as f64 / n;
        mi += pxy * (pxy * n * n / (ca[&p] as f64 * cb[&q] as f64)).ln();
    }
    Ok((2.0 * mi / (ha + hb)).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nf1Report {
    /// Quality x coverage / redundancy.
    pub nf1: f64,
    /// Mean F1 of every predicted community against its best truth match.
    pub quality: f64,
    /// Fraction of truth communities matched by at least one prediction.
    pub coverage: f64,
    /// Matched predictions per distinct matched truth community.
    pub redundancy: f64,
    /// Mean over truth communities of their best-match F1.
    pub mean_f1: f64,
}

fn f1(inter: usize, a: usize, b: usize) -> f64 {
    if inter == 0 {
        0.0
    } else {
        2.0 * inter as f64 / (a + b) as f64
    }
}

/// Normalized F1: every predicted community is matched to the truth
/// community with the highest F1 (lowest id on ties).
pub fn nf1(pred: &Partition, truth: &Partition) -> Result<Nf1Report, MetricError> {
    let (x, y) = aligned(pred, truth)?;
    if y.is_empty() {
        return Err(MetricError::EmptyTruth);
    }
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut sp: BTreeMap<usize, usize> = BTreeMap::new();
    let mut st: BTreeMap<usize, usize> = BTreeMap::new();
    for (&p, &q) in x.iter().zip(&y) {
        *joint.entry((p, q)).or_default() += 1;
        *sp.entry(p).or_default() += 1;
        *st.entry(q).or_default() += 1;
    }
    // Ties go to the community whose first member (in node-id order) comes
    // first, so the result does not depend on community numbering.
    let first_seen = |labels: &[usize]| {
        let mut out: BTreeMap<usize, usize> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            out.entry(l).or_insert(i);
        }
        out
    };
    let (first_p, first_t) = (first_seen(&x), first_seen(&y));
    let best = |from: &BTreeMap<usize, usize>,
                to: &BTreeMap<usize, usize>,
                flip: bool|
     -> Vec<(usize, f64)> {
        let rank = if flip { &first_p } else { &first_t };
        from.iter()
            .map(|(&a, &na)| {
                let mut top = (usize::MAX, 0.0);
                for (&b, &nb) in to {
                    let key = if flip { (b, a) } else { (a, b) };
                    let score = f1(joint.get(&key).copied().unwrap_or(0), na, nb);
                    let better = top.0 == usize::MAX
                        || score > top.1
                        || (score == top.1 && rank[&b] < rank[&top.0]);
                    if better {
                        top = (b, score);
                    }
                }
                top
            })
            .collect()
    };
    let pred_matches = best(&sp, &st, false);
    let truth_matches = best(&st, &sp, true);
    let quality = pred_matches.iter().map(|m| m.1).sum::<f64>() / pred_matches.len() as f64;
    let mut distinct: Vec<usize> = pred_matches
        .iter()
        .filter(|m| m.1 > 0.0)
        .map(|m| m.0)
        .collect();
    let matched = distinct.len();
    distinct.sort_unstable();
    distinct.dedup();
    let coverage = distinct.len() as f64 / st.len() as f64;
    let redundancy = if distinct.is_empty() {
        1.0
    } else {
        matched as f64 / distinct.len() as f64
    };
    Ok(Nf1Report {
        nf1: quality * coverage / redundancy,
        quality,
        coverage,
        redundancy,
        mean_f1: truth_matches.iter().map(|m| m.1).sum::<f64>() / truth_matches.len() as f64,
    })
}

/// Newman modularity `Σ_k [e_kk/|E| − (d_k/2|E|)²]`; 0 without edges.
pub fn modularity(snapshot: &Snapshot, labels: &[usize]) -> f64 {
    let m = snapshot.edge_count();
    if m == 0 {
        return 0.0;
    }
    let mut inside: BTreeMap<usize, usize> = BTreeMap::new();
    let mut degree: BTreeMap<usize, usize> = BTreeMap::new();
    for &(a, b) in snapshot.edges() {
        if labels[a] == labels[b] {
            *inside.entry(labels[a]).or_default() += 1;
        }
    }
    for (i, &l) in labels.iter().enumerate() {
        *degree.entry(l).or_default() += snapshot.degree(i);
    }
    let m = m as f64;
    degree
        .iter()
        .map(|(k, &d)| {
            let e = inside.get(k).copied().unwrap_or(0) as f64;
            e / m - (d as f64 / (2.0 * m)).powi(2)
        })
        .sum()
}

/// Mean over communities of `cut / min(vol, vol of the rest)`; a
/// community with zero volume on either side contributes 0.
pub fn conductance(snapshot: &Snapshot, labels: &[usize]) -> f64 {
    let mut cut: BTreeMap<usize, usize> = BTreeMap::new();
    let mut vol: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        *vol.entry(l).or_default() += snapshot.degree(i);
    }
    for &(a, b) in snapshot.edges() {
        if labels[a] != labels[b] {
            *cut.entry(labels[a]).or_default() += 1;
            *cut.entry(labels[b]).or_default() += 1;
        }
    }
    if vol.is_empty() {
        return 0.0;
    }
    let total: usize = vol.values().sum();
    let sum: f64 = vol
        .iter()
        .map(|(k, &v)| {
            let denom = v.min(total - v);
            if denom == 0 {
                0.0
            } else {
                cut.get(k).copied().unwrap_or(0) as f64 / denom as f64
            }
        })
        .sum();
    sum / vol.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RcsReport {
    /// `1 − mean ‖π^t − π^{t−1}‖₁`, can be negative.
    pub raw: f64,
    /// `1 − mean ‖π^t − π^{t−1}‖₁ / 2`, in `[0, 1]`.
    pub normalized: f64,
}

/// Role consistency over every node present in consecutive snapshots.
/// `pi[t]` rows follow the node order of snapshot `t`.
pub fn rcs(graph: &DynamicGraph, pi: &[Matrix]) -> Result<RcsReport, MetricError> {
    if graph.len() < 2 || pi.len() < 2 {
        return Err(MetricError::TooFewSnapshots);
    }
    if pi.len() != graph.len() {
        return Err(MetricError::Misaligned(format!(
            "{} affinity matrices for {} snapshots",
            pi.len(),
            graph.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for t in 1..graph.len() {
        let (prev, cur) = (graph.snapshot(t - 1)?, graph.snapshot(t)?);
        for (i, id) in cur.ids().iter().enumerate() {
            if let Some(j) = prev.index_of(id) {
                total += pi[t]
                    .row(i)
                    .iter()
                    .zip(pi[t - 1].row(j))
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(MetricError::NoPersistentNodes);
    }
    let mean = total / count as f64;
    Ok(RcsReport {
        raw: 1.0 - mean,
        normalized: 1.0 - mean / 2.0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMetrics {
    pub t: usize,
    pub nmi: Option<f64>,
    pub nf1: Option<Nf1Report>,
    pub modularity: f64,
    pub conductance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub snapshots: Vec<SnapshotMetrics>,
    pub mean_nmi: Option<f64>,
    pub mean_nf1: Option<f64>,
    pub mean_f1: Option<f64>,
    pub mean_modularity: f64,
    pub mean_conductance: f64,
    pub rcs: Option<RcsReport>,
    pub efs: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Per-snapshot structural metrics, plus NMI/NF1 when `truth` is given.
/// Both label vectors follow each snapshot's node order.
pub fn evaluate_partitions(
    graph: &DynamicGraph,
    pred: &[Vec<usize>],
    truth: Option<&[Vec<usize>]>,
) -> Result<MetricReport, MetricError> {
    if pred.len() != graph.len() || truth.is_some_and(|t| t.len() != graph.len()) {
        return Err(MetricError::Misaligned(
            "one label vector per snapshot is required".into(),
        ));
    }
    let mut snapshots = Vec::with_capacity(graph.len());
    for (t, snap) in graph.snapshots().iter().enumerate() {
        let p = Partition::from_snapshot(snap, &pred[t])?;
        let (nmi_v, nf1_v) = match truth {
            Some(tr) => {
                let q = Partition::from_snapshot(snap, &tr[t])?;
                (Some(nmi(&p, &q)?), Some(nf1(&p, &q)?))
            }
            None => (None, None),
        };
        snapshots.push(SnapshotMetrics {
            t,
            nmi: nmi_v,
            nf1: nf1_v,
            modularity: modularity(snap, &pred[t]),
            conductance: conductance(snap, &pred[t]),
        });
    }
    Ok(MetricReport {
        mean_nmi: mean(snapshots.iter().filter_map(|s| s.nmi)),
        mean_nf1: mean(
            snapshots
                .iter()
                .filter_map(|s| s.nf1.as_ref().map(|r| r.nf1)),
        ),
        mean_f1: mean(
            snapshots
                .iter()
                .filter_map(|s| s.nf1.as_ref().map(|r| r.mean_f1)),
        ),
        mean_modularity: mean(snapshots.iter().map(|s| s.modularity)).unwrap_or(0.0),
        mean_conductance: mean(snapshots.iter().map(|s| s.conductance)).unwrap_or(0.0),
        snapshots,
        rcs: None,
        efs: None,
    })
}
