use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DynamicGraph, GraphError};

/// Requested versus actually added random edges per snapshot.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub requested: Vec<usize>,
    pub added: Vec<usize>,
}

impl NoiseReport {
    pub fn saturated(&self) -> bool {
        self.requested.iter().zip(&self.added).any(|(r, a)| a < r)
    }
}

/// Adds `floor(fraction * |E_t|)` uniformly random new edges to every
/// snapshot. Existing edges are kept; no duplicates or self-loops appear.
pub fn inject_noise(
    graph: &DynamicGraph,
    fraction: f64,
    seed: u64,
) -> Result<(DynamicGraph, NoiseReport), GraphError> {
    if !(0.0..=0.5).contains(&fraction) {
        return Err(GraphError::InvalidConfig(format!(
            "noise fraction must lie in [0, 0.5], got {fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = NoiseReport::default();
    let mut snapshots = Vec::with_capacity(graph.len());
    for snap in graph.snapshots() {
        let n = snap.node_count();
        let requested = (fraction * snap.edge_count() as f64).floor() as usize;
        let capacity = (n * n.saturating_sub(1) / 2).saturating_sub(snap.edge_count());
        let target = requested.min(capacity);
        let mut existing: HashSet<(usize, usize)> = snap.edges().iter().copied().collect();
        let mut extra = Vec::with_capacity(target);
        if target > 0 && target * 2 >= capacity {
            // Dense regime: enumerate the complement and shuffle it.
            let mut free = Vec::with_capacity(capacity);
            for a in 0..n {
                for b in a + 1..n {
                    if !existing.contains(&(a, b)) {
                        free.push((a, b));
                    }
                }
            }
            free.shuffle(&mut rng);
            extra.extend(free.into_iter().take(target));
        } else {
            while extra.len() < target {
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                if a == b {
                    continue;
                }
                let key = (a.min(b), a.max(b));
                if existing.insert(key) {
                    extra.push(key);
                }
            }
        }
        if target < requested {
            log::warn!(
                "snapshot {}: requested {requested} noise edges, only {target} possible",
                snap.t()
            );
        }
        report.requested.push(requested);
        report.added.push(extra.len());
        snapshots.push(snap.with_added_edges(&extra)?);
    }
    Ok((DynamicGraph::new(snapshots)?, report))
}
