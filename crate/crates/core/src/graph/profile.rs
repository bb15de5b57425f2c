//! Structural statistics used for role priors, volatility and claim checks.

use std::collections::{HashSet, VecDeque};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DynamicGraph, GraphError, Snapshot};

/// Snapshots up to this size get exact betweenness.
pub const EXACT_BETWEENNESS_LIMIT: usize = 5000;
/// Source count for sampled betweenness on larger snapshots.
pub const SAMPLED_SOURCES: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuralProfile {
    pub degree: usize,
    pub betweenness: f64,
    pub closeness: f64,
    pub clustering_coeff: f64,
    pub intra_density: f64,
    pub volatility: f64,
    pub stability: f64,
}

/// Normalized neighborhood change of `node` between positions `t - 1` and `t`:
/// `|N_t xor N_{t-1}| / (|N_t| + |N_{t-1}|)`, and 0 when both are empty.
pub fn structural_change(graph: &DynamicGraph, t: usize, node: &str) -> Result<f64, GraphError> {
    let not_persistent = || GraphError::NotPersistent {
        node: node.to_string(),
        t,
    };
    if t == 0 {
        return Err(not_persistent());
    }
    let now = graph.snapshot(t)?;
    let before = graph.snapshot(t - 1)?;
    let (Some(i), Some(j)) = (now.index_of(node), before.index_of(node)) else {
        return Err(not_persistent());
    };
    let a: HashSet<&str> = now.neighbors(i).iter().map(|&u| now.id(u)).collect();
    let b: HashSet<&str> = before.neighbors(j).iter().map(|&u| before.id(u)).collect();
    let total = a.len() + b.len();
    if total == 0 {
        return Ok(0.0);
    }
    Ok(a.symmetric_difference(&b).count() as f64 / total as f64)
}

fn brandes_accumulate(snapshot: &Snapshot, source: usize, acc: &mut [f64]) {
    let n = snapshot.node_count();
    let mut stack = Vec::with_capacity(n);
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut sigma = vec![0.0f64; n];
    let mut dist = vec![-1i64; n];
    sigma[source] = 1.0;
    dist[source] = 0;
    let mut queue = VecDeque::new();
    queue.push_back(source);
    while let Some(v) = queue.pop_front() {
        stack.push(v);
        for &w in snapshot.neighbors(v) {
            if dist[w] < 0 {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
            if dist[w] == dist[v] + 1 {
                sigma[w] += sigma[v];
                preds[w].push(v);
            }
        }
    }
    let mut delta = vec![0.0f64; n];
    while let Some(w) = stack.pop() {
        for &v in &preds[w] {
            delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
        }
        if w != source {
            acc[w] += delta[w];
        }
    }
}

fn normalize_betweenness(mut raw: Vec<f64>, n: usize, scale: f64) -> Vec<f64> {
    if n < 3 {
        return vec![0.0; n];
    }
    // Each unordered pair is seen from both endpoints.
    let denom = ((n - 1) * (n - 2)) as f64;
    for v in &mut raw {
        *v = (*v * scale / denom).clamp(0.0, 1.0);
    }
    raw
}

/// Exact Brandes betweenness normalized by `(n-1)(n-2)/2`.
pub fn betweenness_exact(snapshot: &Snapshot) -> Vec<f64> {
    let n = snapshot.node_count();
    let mut acc = vec![0.0; n];
    for s in 0..n {
        brandes_accumulate(snapshot, s, &mut acc);
    }
    normalize_betweenness(acc, n, 1.0)
}

/// Betweenness estimated from `k` uniformly sampled sources (without replacement).
pub fn betweenness_sampled<R: Rng>(snapshot: &Snapshot, k: usize, rng: &mut R) -> Vec<f64> {
    let n = snapshot.node_count();
    let k = k.min(n);
    if k == 0 {
        return vec![0.0; n];
    }
    let mut acc = vec![0.0; n];
    for s in sample(rng, n, k).into_iter() {
        brandes_accumulate(snapshot, s, &mut acc);
    }
    normalize_betweenness(acc, n, n as f64 / k as f64)
}

/// Exact up to [`EXACT_BETWEENNESS_LIMIT`] nodes, sampled (fixed seed) beyond.
pub fn betweenness(snapshot: &Snapshot) -> Vec<f64> {
    if snapshot.node_count() <= EXACT_BETWEENNESS_LIMIT {
        betweenness_exact(snapshot)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(snapshot.t() as u64);
        betweenness_sampled(snapshot, SAMPLED_SOURCES, &mut rng)
    }
}

/// `(reachable - 1) / sum of distances`, 0 for isolated nodes.
pub fn closeness(snapshot: &Snapshot, node: usize) -> f64 {
    let n = snapshot.node_count();
    let mut dist = vec![usize::MAX; n];
    dist[node] = 0;
    let mut queue = VecDeque::from([node]);
    let (mut reached, mut total) = (0usize, 0usize);
    while let Some(v) = queue.pop_front() {
        for &w in snapshot.neighbors(v) {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                reached += 1;
                total += dist[w];
                queue.push_back(w);
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        reached as f64 / total as f64
    }
}

/// Fraction of neighbor pairs that are themselves connected.
pub fn clustering_coefficient(snapshot: &Snapshot, node: usize) -> f64 {
    let nb = snapshot.neighbors(node);
    let k = nb.len();
    if k < 2 {
        return 0.0;
    }
    let mut links = 0usize;
    for (x, &a) in nb.iter().enumerate() {
        for &b in &nb[x + 1..] {
            if snapshot.has_edge(a, b) {
                links += 1;
            }
        }
    }
    links as f64 / (k * (k - 1) / 2) as f64
}

/// Caches snapshot-wide quantities so profiling many nodes stays cheap.
pub struct SnapshotProfiler<'g> {
    graph: &'g DynamicGraph,
    t: usize,
    betweenness: Vec<f64>,
}

impl<'g> SnapshotProfiler<'g> {
    pub fn new(graph: &'g DynamicGraph, t: usize) -> Result<Self, GraphError> {
        let snap = graph.snapshot(t)?;
        Ok(Self {
            graph,
            t,
            betweenness: betweenness(snap),
        })
    }

    pub fn betweenness(&self) -> &[f64] {
        &self.betweenness
    }

    /// Profile of `node`; `assignment` gives community labels by node index.
    pub fn profile(
        &self,
        node: &str,
        assignment: Option<&[usize]>,
    ) -> Result<StructuralProfile, GraphError> {
        let snap = self.graph.snapshot(self.t)?;
        let i = snap.index_of(node).ok_or_else(|| GraphError::UnknownNode {
            node: node.to_string(),
            t: self.t,
        })?;
        let degree = snap.degree(i);
        let intra_density = match assignment {
            Some(labels) if degree > 0 => {
                let inside = snap
                    .neighbors(i)
                    .iter()
                    .filter(|&&u| labels[u] == labels[i])
                    .count();
                inside as f64 / degree as f64
            }
            _ => 0.0,
        };
        let volatility = if self.t > 0 {
            structural_change(self.graph, self.t, node).unwrap_or(0.0)
        } else {
            0.0
        };
        let mut changes = Vec::new();
        for s in 1..=self.t {
            if let Ok(d) = structural_change(self.graph, s, node) {
                changes.push(d);
            }
        }
        let stability = if changes.is_empty() {
            1.0
        } else {
            1.0 - changes.iter().sum::<f64>() / changes.len() as f64
        };
        Ok(StructuralProfile {
            degree,
            betweenness: self.betweenness[i],
            closeness: closeness(snap, i),
            clustering_coeff: clustering_coefficient(snap, i),
            intra_density,
            volatility,
            stability,
        })
    }
}

/// One-off profile of a single node; prefer [`SnapshotProfiler`] in loops.
pub fn node_structural_profile(
    graph: &DynamicGraph,
    t: usize,
    node: &str,
    assignment: Option<&[usize]>,
) -> Result<StructuralProfile, GraphError> {
    SnapshotProfiler::new(graph, t)?.profile(node, assignment)
}
