//! Dynamic graph data model: snapshots, text format, synthetic benchmark
//! generators, noise injection and per-node structural profiles.

mod format;
mod generator;
mod noise;
mod profile;

pub use format::{parse_dynamic_graph, serialize_dynamic_graph};
pub use generator::{
    generate_synthetic, planted_partition, EventAction, EventKind, GeneratedGraph, GeneratorConfig,
    GeneratorEvent, MIN_COMMUNITY_SIZE,
};
pub use noise::{inject_noise, NoiseReport};
pub use profile::{
    betweenness, betweenness_exact, betweenness_sampled, closeness, clustering_coefficient,
    node_structural_profile, structural_change, SnapshotProfiler, StructuralProfile,
    EXACT_BETWEENNESS_LIMIT, SAMPLED_SOURCES,
};

use std::collections::{HashMap, HashSet};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("line {line}, column {column}: {kind}")]
    Parse {
        line: usize,
        column: usize,
        kind: Box<GraphError>,
    },
    #[error("malformed line: {0}")]
    Malformed(String),
    #[error("self-loop on node {0}")]
    SelfLoop(String),
    #[error("edge endpoint {0} is not a node of the snapshot")]
    DanglingEndpoint(String),
    #[error("duplicate edge {0} -- {1}")]
    DuplicateEdge(String, String),
    #[error("duplicate node {0}")]
    DuplicateNode(String),
    #[error("snapshot marker {got} does not follow {previous:?}")]
    NonMonotoneSnapshot { previous: Option<usize>, got: usize },
    #[error("node {node} has {got} features, expected {expected}")]
    FeatureDimension {
        node: String,
        expected: usize,
        got: usize,
    },
    #[error("labels must cover every node or none (snapshot {t})")]
    PartialLabels { t: usize },
    #[error("node {node} is not present in both snapshot {t} and its predecessor")]
    NotPersistent { node: String, t: usize },
    #[error("unknown node {node} in snapshot {t}")]
    UnknownNode { node: String, t: usize },
    #[error("snapshot {0} out of range")]
    SnapshotOutOfRange(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl GraphError {
    /// Innermost error, looking through positional wrappers.
    pub fn root(&self) -> &GraphError {
        match self {
            GraphError::Parse { kind, .. } => kind.root(),
            other => other,
        }
    }
}

/// One static graph in a dynamic sequence.
///
/// Nodes are opaque string ids mapped to dense indices in declaration
/// order; edges are stored once with the lower index first.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    t: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    features: Option<Vec<Vec<f64>>>,
    labels: Option<Vec<usize>>,
}

impl Snapshot {
    /// Validates and builds a snapshot from node ids and index-pair edges.
    pub fn new(
        t: usize,
        ids: Vec<String>,
        edges: Vec<(usize, usize)>,
        features: Option<Vec<Vec<f64>>>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self, GraphError> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(GraphError::DuplicateNode(id.clone()));
            }
        }
        let n = ids.len();
        let mut adjacency = vec![Vec::new(); n];
        let mut seen = HashSet::with_capacity(edges.len());
        let mut normalized = Vec::with_capacity(edges.len());
        for &(a, b) in &edges {
            if a >= n || b >= n {
                let bad = if a >= n { a } else { b };
                return Err(GraphError::DanglingEndpoint(format!("#{bad}")));
            }
            if a == b {
                return Err(GraphError::SelfLoop(ids[a].clone()));
            }
            let key = (a.min(b), a.max(b));
            if !seen.insert(key) {
                return Err(GraphError::DuplicateEdge(ids[a].clone(), ids[b].clone()));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
            normalized.push(key);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        if let Some(feats) = &features {
            let expected = feats.first().map_or(0, Vec::len);
            if feats.len() != n {
                return Err(GraphError::FeatureDimension {
                    node: "<all>".into(),
                    expected: n,
                    got: feats.len(),
                });
            }
            for (i, f) in feats.iter().enumerate() {
                if f.len() != expected {
                    return Err(GraphError::FeatureDimension {
                        node: ids[i].clone(),
                        expected,
                        got: f.len(),
                    });
                }
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(GraphError::PartialLabels { t });
            }
        }
        Ok(Self {
            t,
            ids,
            index,
            edges: normalized,
            adjacency,
            features,
            labels,
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// Edges as `(low, high)` index pairs.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Sorted neighbor indices of node `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(Vec::len).collect()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    pub fn features(&self) -> Option<&[Vec<f64>]> {
        self.features.as_deref()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.features
            .as_ref()
            .map(|f| f.first().map_or(0, Vec::len))
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Returns a copy with extra edges appended (validated like [`Snapshot::new`]).
    pub fn with_added_edges(&self, extra: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut edges = self.edges.clone();
        edges.extend_from_slice(extra);
        Snapshot::new(
            self.t,
            self.ids.clone(),
            edges,
            self.features.clone(),
            self.labels.clone(),
        )
    }
}

/// Ordered snapshot sequence with stable node ids.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicGraph {
    snapshots: Vec<Snapshot>,
}

impl DynamicGraph {
    /// Snapshot indices must start at 0 and strictly increase.
    pub fn new(snapshots: Vec<Snapshot>) -> Result<Self, GraphError> {
        let mut previous: Option<usize> = None;
        for s in &snapshots {
            let ok = match previous {
                None => s.t == 0,
                Some(p) => s.t > p,
            };
            if !ok {
                return Err(GraphError::NonMonotoneSnapshot { previous, got: s.t });
            }
            previous = Some(s.t);
        }
        Ok(Self { snapshots })
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    /// Snapshot at sequence position `pos`.
    pub fn snapshot(&self, pos: usize) -> Result<&Snapshot, GraphError> {
        self.snapshots
            .get(pos)
            .ok_or(GraphError::SnapshotOutOfRange(pos))
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Every node id in order of first appearance.
    pub fn node_universe(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for s in &self.snapshots {
            for id in &s.ids {
                if seen.insert(id.as_str()) {
                    out.push(id.clone());
                }
            }
        }
        out
    }

    pub fn has_labels(&self) -> bool {
        !self.snapshots.is_empty() && self.snapshots.iter().all(|s| s.labels.is_some())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("n{i}")).collect()
    }

    #[test]
    fn rejects_self_loops_and_duplicates() {
        assert!(matches!(
            Snapshot::new(0, ids(2), vec![(1, 1)], None, None),
            Err(GraphError::SelfLoop(_))
        ));
        assert!(matches!(
            Snapshot::new(0, ids(2), vec![(0, 1), (1, 0)], None, None),
            Err(GraphError::DuplicateEdge(..))
        ));
        assert!(matches!(
            Snapshot::new(0, ids(2), vec![(0, 2)], None, None),
            Err(GraphError::DanglingEndpoint(_))
        ));
    }

    #[test]
    fn ragged_features_rejected() {
        let err = Snapshot::new(
            0,
            ids(2),
            vec![],
            Some(vec![vec![1.0], vec![1.0, 2.0]]),
            None,
        );
        assert!(matches!(err, Err(GraphError::FeatureDimension { .. })));
    }

    #[test]
    fn snapshot_order_enforced() {
        let a = Snapshot::new(1, ids(1), vec![], None, None).unwrap();
        assert!(DynamicGraph::new(vec![a]).is_err());
    }

    #[test]
    fn degree_matches_edge_count() {
        let s = Snapshot::new(0, ids(4), vec![(0, 1), (0, 2), (3, 0)], None, None).unwrap();
        assert_eq!(s.degree(0), 3);
        assert!(s.has_edge(0, 3));
        assert!(!s.has_edge(1, 2));
    }
}
