//! Line-oriented snapshot file format.
//!
//! ```text
//! # comment
//! T 0
//! V alice 0.5 1.0
//! V bob 0.1 0.2
//! E alice bob
//! L alice 3
//! L bob 3
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{DynamicGraph, GraphError, Snapshot};

struct PendingSnapshot {
    t: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    features: Vec<Vec<f64>>,
    edges: Vec<(usize, usize, usize)>,
    labels: Vec<(usize, usize)>,
}

impl PendingSnapshot {
    fn new(t: usize) -> Self {
        Self {
            t,
            ids: Vec::new(),
            index: HashMap::new(),
            features: Vec::new(),
            edges: Vec::new(),
            labels: Vec::new(),
        }
    }

    fn finish(
        self,
        edge_endpoints: &HashMap<usize, (String, String)>,
    ) -> Result<Snapshot, GraphError> {
        let n = self.ids.len();
        let mut seen = std::collections::HashSet::new();
        let mut edges = Vec::with_capacity(self.edges.len());
        for &(line, a, b) in &self.edges {
            let key = (a.min(b), a.max(b));
            if !seen.insert(key) {
                let (x, y) = edge_endpoints[&line].clone();
                return Err(at(line, 1, GraphError::DuplicateEdge(x, y)));
            }
            edges.push((a, b));
        }
        let has_features = self.features.iter().any(|f| !f.is_empty());
        let features = has_features.then_some(self.features);
        let labels = if self.labels.is_empty() {
            None
        } else {
            let mut out = vec![None; n];
            for &(node, label) in &self.labels {
                out[node] = Some(label);
            }
            let collected: Option<Vec<usize>> = out.into_iter().collect();
            Some(collected.ok_or(GraphError::PartialLabels { t: self.t })?)
        };
        Snapshot::new(self.t, self.ids, edges, features, labels)
    }
}

fn at(line: usize, column: usize, kind: GraphError) -> GraphError {
    GraphError::Parse {
        line,
        column,
        kind: Box::new(kind),
    }
}

/// Column (1-based) where token `k` of `line` starts.
fn column_of(line: &str, k: usize) -> usize {
    let mut count = 0;
    let mut in_token = false;
    for (pos, ch) in line.char_indices() {
        if ch.is_whitespace() {
            in_token = false;
        } else if !in_token {
            if count == k {
                return pos + 1;
            }
            count += 1;
            in_token = true;
        }
    }
    line.len() + 1
}

/// Parses the snapshot text format into a validated graph.
pub fn parse_dynamic_graph(text: &str) -> Result<DynamicGraph, GraphError> {
    let mut snapshots = Vec::new();
    let mut current: Option<PendingSnapshot> = None;
    let mut edge_names: HashMap<usize, (String, String)> = HashMap::new();
    let mut previous_t: Option<usize> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        let tag = tokens[0];
        if tag == "T" {
            if tokens.len() != 2 {
                return Err(at(
                    line_no,
                    column_of(raw, 0),
                    GraphError::Malformed("expected `T <t>`".into()),
                ));
            }
            let t: usize = tokens[1].parse().map_err(|_| {
                at(
                    line_no,
                    column_of(raw, 1),
                    GraphError::Malformed(format!("bad snapshot index `{}`", tokens[1])),
                )
            })?;
            let monotone = match previous_t {
                None => t == 0,
                Some(p) => t > p,
            };
            if !monotone {
                return Err(at(
                    line_no,
                    column_of(raw, 1),
                    GraphError::NonMonotoneSnapshot {
                        previous: previous_t,
                        got: t,
                    },
                ));
            }
            if let Some(done) = current.take() {
                snapshots.push(done.finish(&edge_names)?);
            }
            previous_t = Some(t);
            current = Some(PendingSnapshot::new(t));
            continue;
        }
        let Some(snap) = current.as_mut() else {
            return Err(at(
                line_no,
                1,
                GraphError::Malformed("content before the first `T` marker".into()),
            ));
        };
        match tag {
            "V" => {
                if tokens.len() < 2 {
                    return Err(at(
                        line_no,
                        1,
                        GraphError::Malformed("expected `V <id> [features...]`".into()),
                    ));
                }
                let id = tokens[1].to_string();
                let mut feats = Vec::with_capacity(tokens.len() - 2);
                for (k, tok) in tokens.iter().enumerate().skip(2) {
                    let v: f64 = tok.parse().map_err(|_| {
                        at(
                            line_no,
                            column_of(raw, k),
                            GraphError::Malformed(format!("bad feature value `{tok}`")),
                        )
                    })?;
                    feats.push(v);
                }
                if let Some(first) = snap
                    .features
                    .iter()
                    .find(|f| !f.is_empty())
                    .or(snap.features.first())
                {
                    if first.len() != feats.len() {
                        return Err(at(
                            line_no,
                            column_of(raw, 2),
                            GraphError::FeatureDimension {
                                node: id,
                                expected: first.len(),
                                got: feats.len(),
                            },
                        ));
                    }
                }
                if snap.index.contains_key(&id) {
                    return Err(at(
                        line_no,
                        column_of(raw, 1),
                        GraphError::DuplicateNode(id),
                    ));
                }
                snap.index.insert(id.clone(), snap.ids.len());
                snap.ids.push(id);
                snap.features.push(feats);
            }
            "E" => {
                if tokens.len() != 3 {
                    return Err(at(
                        line_no,
                        1,
                        GraphError::Malformed("expected `E <id> <id>`".into()),
                    ));
                }
                let lookup = |k: usize| -> Result<usize, GraphError> {
                    snap.index.get(tokens[k]).copied().ok_or_else(|| {
                        at(
                            line_no,
                            column_of(raw, k),
                            GraphError::DanglingEndpoint(tokens[k].to_string()),
                        )
                    })
                };
                let a = lookup(1)?;
                let b = lookup(2)?;
                if a == b {
                    return Err(at(
                        line_no,
                        column_of(raw, 2),
                        GraphError::SelfLoop(tokens[1].to_string()),
                    ));
                }
                edge_names.insert(line_no, (tokens[1].to_string(), tokens[2].to_string()));
                snap.edges.push((line_no, a, b));
            }
            "L" => {
                if tokens.len() != 3 {
                    return Err(at(
                        line_no,
                        1,
                        GraphError::Malformed("expected `L <id> <community>`".into()),
                    ));
                }
                let node = snap.index.get(tokens[1]).copied().ok_or_else(|| {
                    at(
                        line_no,
                        column_of(raw, 1),
                        GraphError::UnknownNode {
                            node: tokens[1].to_string(),
                            t: snap.t,
                        },
                    )
                })?;
                let label: usize = tokens[2].parse().map_err(|_| {
                    at(
                        line_no,
                        column_of(raw, 2),
                        GraphError::Malformed(format!("bad community id `{}`", tokens[2])),
                    )
                })?;
                snap.labels.push((node, label));
            }
            other => {
                return Err(at(
                    line_no,
                    1,
                    GraphError::Malformed(format!("unknown record `{other}`")),
                ));
            }
        }
    }
    if let Some(done) = current.take() {
        snapshots.push(done.finish(&edge_names)?);
    }
    DynamicGraph::new(snapshots)
}

/// Writes the canonical text form; `parse_dynamic_graph` inverts it exactly.
pub fn serialize_dynamic_graph(graph: &DynamicGraph) -> String {
    let mut out = String::new();
    for s in graph.snapshots() {
        let _ = writeln!(out, "T {}", s.t());
        for (i, id) in s.ids().iter().enumerate() {
            out.push_str("V ");
            out.push_str(id);
            if let Some(f) = s.features() {
                for v in &f[i] {
                    let _ = write!(out, " {v:?}");
                }
            }
            out.push('\n');
        }
        for &(a, b) in s.edges() {
            let _ = writeln!(out, "E {} {}", s.id(a), s.id(b));
        }
        if let Some(labels) = s.labels() {
            for (i, l) in labels.iter().enumerate() {
                let _ = writeln!(out, "L {} {}", s.id(i), l);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file() {
        let g = parse_dynamic_graph("T 0\nV 1\nV 2\nE 1 2").unwrap();
        assert_eq!(g.len(), 1);
        let s = g.snapshot(0).unwrap();
        assert_eq!(s.node_count(), 2);
        assert_eq!(s.edge_count(), 1);
    }

    #[test]
    fn self_loop_reports_position() {
        let err = parse_dynamic_graph("T 0\nV 1\nE 1 1\n").unwrap_err();
        match &err {
            GraphError::Parse { line, column, .. } => {
                assert_eq!(*line, 3);
                assert_eq!(*column, 5);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(err.root(), GraphError::SelfLoop(_)));
    }

    #[test]
    fn dangling_and_duplicate_edges() {
        let err = parse_dynamic_graph("T 0\nV a\nE a b\n").unwrap_err();
        assert!(matches!(err.root(), GraphError::DanglingEndpoint(n) if n == "b"));
        let err = parse_dynamic_graph("T 0\nV a\nV b\nE a b\nE b a\n").unwrap_err();
        assert!(matches!(err, GraphError::Parse { line: 5, .. }));
        assert!(matches!(err.root(), GraphError::DuplicateEdge(..)));
    }

    #[test]
    fn non_monotone_marker() {
        let err = parse_dynamic_graph("T 0\nV a\nT 2\nV a\nT 1\n").unwrap_err();
        assert!(matches!(err, GraphError::Parse { line: 5, .. }));
        assert!(matches!(err.root(), GraphError::NonMonotoneSnapshot { .. }));
        assert!(parse_dynamic_graph("T 1\n").is_err());
    }

    #[test]
    fn malformed_lines() {
        assert!(parse_dynamic_graph("V a\n").is_err());
        assert!(parse_dynamic_graph("T 0\nQ a\n").is_err());
        assert!(parse_dynamic_graph("T 0\nV a x\n").is_err());
        assert!(parse_dynamic_graph("T 0\nV a 1.0\nV b\n").is_err());
        assert!(parse_dynamic_graph("T 0\nV a\nV b\nL a 1\n").is_err());
    }

    #[test]
    fn comments_features_and_labels() {
        let text = "# header\nT 0\nV a 0.5 -1\nV b 2 3\nE a b\nL a 1\nL b 2\nT 1\nV a 1 1\n";
        let g = parse_dynamic_graph(text).unwrap();
        assert_eq!(g.snapshot(0).unwrap().labels(), Some(&[1, 2][..]));
        assert_eq!(
            g.snapshot(0).unwrap().features().unwrap()[0],
            vec![0.5, -1.0]
        );
        let again = parse_dynamic_graph(&serialize_dynamic_graph(&g)).unwrap();
        assert_eq!(again, g);
    }
}
