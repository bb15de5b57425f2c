use std::cell::OnceCell;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::MetricError;
use crate::graph::{betweenness, DynamicGraph};
use crate::roles::{dominant_role, track_events, CommunityEvent, EventThresholds, PartitionView};
use crate::semantics::{ClaimKind, ClaimValue, SemanticDescription, StructuralClaim};
use crate::tensor::Matrix;

/// Recomputes claimed quantities from the graph, final labels and role
/// affinities. Betweenness and events are computed once per snapshot.
pub struct ClaimVerifier<'a> {
    graph: &'a DynamicGraph,
    labels: &'a [Vec<usize>],
    pi: &'a [Matrix],
    thresholds: EventThresholds,
    betweenness: Vec<OnceCell<Vec<f64>>>,
    events: Vec<OnceCell<Vec<CommunityEvent>>>,
}

impl<'a> ClaimVerifier<'a> {
    pub fn new(
        graph: &'a DynamicGraph,
        labels: &'a [Vec<usize>],
        pi: &'a [Matrix],
        thresholds: EventThresholds,
    ) -> Result<Self, MetricError> {
        if labels.len() != graph.len() || pi.len() != graph.len() {
            return Err(MetricError::Misaligned(
                "labels and affinities are needed for every snapshot".into(),
            ));
        }
        Ok(Self {
            graph,
            labels,
            pi,
            thresholds,
            betweenness: (0..graph.len()).map(|_| OnceCell::new()).collect(),
            events: (0..graph.len()).map(|_| OnceCell::new()).collect(),
        })
    }

    fn betweenness(&self, t: usize) -> &[f64] {
        self.betweenness[t].get_or_init(|| betweenness(&self.graph.snapshots()[t]))
    }

    fn events(&self, t: usize) -> &[CommunityEvent] {
        self.events[t].get_or_init(|| {
            if t == 0 {
                return Vec::new();
            }
            let (prev, cur) = (&self.graph.snapshots()[t - 1], &self.graph.snapshots()[t]);
            track_events(
                &PartitionView {
                    ids: prev.ids(),
                    labels: &self.labels[t - 1],
                    pi: &self.pi[t - 1],
                },
                &PartitionView {
                    ids: cur.ids(),
                    labels: &self.labels[t],
                    pi: &self.pi[t],
                },
                &self.thresholds,
            )
        })
    }

    fn event(&self, claim: &StructuralClaim) -> Option<&CommunityEvent> {
        self.events(claim.t).iter().find(|e| {
            e.community_t == claim.previous_community && e.community_t1 == claim.community
        })
    }

    fn gamma(&self, t: usize, community: usize, role: usize) -> Option<f64> {
        let members: Vec<usize> = (0..self.labels[t].len())
            .filter(|&i| self.labels[t][i] == community)
            .collect();
        if members.is_empty() {
            return None;
        }
        Some(
            members
                .iter()
                .map(|&i| self.pi[t].get(i, role))
                .sum::<f64>()
                / members.len() as f64,
        )
    }

    fn node_row(&self, t: usize, node: &Option<String>) -> Option<usize> {
        self.graph.snapshots().get(t)?.index_of(node.as_deref()?)
    }

    /// Whether the claim holds within its tolerance.
    pub fn verify(&self, claim: &StructuralClaim) -> bool {
        if claim.t >= self.graph.len() {
            return false;
        }
        let t = claim.t;
        let close = |actual: f64, asserted: f64| (actual - asserted).abs() <= claim.tolerance;
        let number = match claim.value {
            ClaimValue::Number(v) => Some(v),
            _ => None,
        };
        match claim.kind {
            ClaimKind::NodeDegree => match (self.node_row(t, &claim.node), number) {
                (Some(i), Some(v)) => close(self.graph.snapshots()[t].degree(i) as f64, v),
                _ => false,
            },
            ClaimKind::NodeBetweenness => match (self.node_row(t, &claim.node), number) {
                (Some(i), Some(v)) => close(self.betweenness(t)[i], v),
                _ => false,
            },
            ClaimKind::DominantRolePct | ClaimKind::SecondaryRolePct => {
                let (Some(i), Some(v), Some(role)) =
                    (self.node_row(t, &claim.node), number, claim.role)
                else {
                    return false;
                };
                let row = self.pi[t].row(i);
                let is_dominant = dominant_role(row) == role;
                let wanted = claim.kind == ClaimKind::DominantRolePct;
                is_dominant == wanted && close(100.0 * row[role.index()], v)
            }
            ClaimKind::CommunitySize => {
                let Some(v) = number else { return false };
                match (claim.community, claim.previous_community) {
                    (Some(c), _) => {
                        close(self.labels[t].iter().filter(|&&l| l == c).count() as f64, v)
                    }
                    (None, Some(_)) => self
                        .event(claim)
                        .is_some_and(|e| close(e.delta.size_t1 as f64, v)),
                    (None, None) => false,
                }
            }
            ClaimKind::CompositionPct => match (claim.community, claim.role, number) {
                (Some(c), Some(r), Some(v)) => self
                    .gamma(t, c, r.index())
                    .is_some_and(|g| close(100.0 * g, v)),
                _ => false,
            },
            ClaimKind::CompositionShift => match (claim.role, number) {
                (Some(r), Some(v)) => self
                    .event(claim)
                    .is_some_and(|e| close(100.0 * e.delta.delta_gamma[r.index()], v)),
                _ => false,
            },
            ClaimKind::EventLabel => match claim.value {
                ClaimValue::Event(label) => self.event(claim).is_some_and(|e| e.label == label),
                _ => false,
            },
            ClaimKind::RoleTrend => {
                let (ClaimValue::Trend { from, to }, Some(role)) = (&claim.value, claim.role)
                else {
                    return false;
                };
                if t == 0 {
                    return false;
                }
                match (
                    self.node_row(t - 1, &claim.node),
                    self.node_row(t, &claim.node),
                ) {
                    (Some(j), Some(i)) => {
                        close(100.0 * self.pi[t - 1].get(j, role.index()), *from)
                            && close(100.0 * self.pi[t].get(i, role.index()), *to)
                    }
                    _ => false,
                }
            }
        }
    }
}

/// Fraction of `min(n, total)` uniformly sampled claims that verify.
pub fn efs(
    descriptions: &[SemanticDescription],
    verifier: &ClaimVerifier,
    n: usize,
    seed: u64,
) -> Result<f64, MetricError> {
    if n == 0 {
        return Err(MetricError::ZeroSample);
    }
    let claims: Vec<&StructuralClaim> = descriptions.iter().flat_map(|d| &d.claims).collect();
    if claims.is_empty() {
        return Err(MetricError::NoClaims);
    }
    let take = n.min(claims.len());
    let picked: Vec<usize> = if take == claims.len() {
        (0..take).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample(&mut rng, claims.len(), take).into_vec()
    };
    let ok = picked
        .iter()
        .filter(|&&i| verifier.verify(claims[i]))
        .count();
    Ok(ok as f64 / take as f64)
}
