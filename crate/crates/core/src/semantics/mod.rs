//! Templated node descriptions at three levels (node, community,
//! evolution). Every number printed in a description is backed by a
//! [`StructuralClaim`] that can be checked against the graph.

mod claims;

pub use claims::{numerals_in, ClaimKind, ClaimValue, StructuralClaim};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{DynamicGraph, GraphError, SnapshotProfiler};
use crate::roles::{
    compositions, dominant_role, track_events, CommunityComposition, CommunityEvent, EventLabel,
    EventThresholds, PartitionView, Role, RoleError, ROLE_COUNT,
};
use crate::tensor::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemanticsError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Roles(#[from] RoleError),
    #[error("community {0} has no members")]
    EmptyCommunity(usize),
    #[error("activation threshold must lie in (0, 1), got {0}")]
    Threshold(f64),
    #[error("node {node} is not in snapshot {t}")]
    UnknownNode { node: String, t: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateConfig {
    /// Minimum affinity for a secondary role mention.
    pub theta: f64,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        Self { theta: 0.15 }
    }
}

impl TemplateConfig {
    pub fn validate(&self) -> Result<(), SemanticsError> {
        if self.theta > 0.0 && self.theta < 1.0 {
            Ok(())
        } else {
            Err(SemanticsError::Threshold(self.theta))
        }
    }
}

/// Three-level description of one node at one snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticDescription {
    pub node: String,
    pub t: usize,
    pub node_text: String,
    pub community_text: String,
    pub evolution_text: String,
    pub claims: Vec<StructuralClaim>,
}

impl SemanticDescription {
    pub fn text(&self) -> String {
        format!(
            "Node-level: {}\nCommunity-level: {}\nEvolution-level: {}",
            self.node_text, self.community_text, self.evolution_text
        )
    }

    /// Numerals of the rendered text, ignoring the node's own id.
    pub fn text_numerals(&self) -> Vec<String> {
        let id = format!("ode {}", self.node);
        numerals_in(&self.text().replace(&id, "ode"))
    }

    /// Numerals all claims account for.
    pub fn claim_numerals(&self) -> Vec<String> {
        self.claims
            .iter()
            .flat_map(StructuralClaim::numerals)
            .collect()
    }
}

/// Whole-number percentage used everywhere in rendered text.
pub fn percent(x: f64) -> f64 {
    (100.0 * x).round()
}

/// Half a rounding step plus slack for float noise.
pub(crate) const ROUNDING_TOLERANCE: f64 = 0.5 + 1e-9;
pub(crate) const BETWEENNESS_TOLERANCE: f64 = 0.005 + 1e-9;
/// Composition percentages are checked to within one point.
pub(crate) const COMPOSITION_TOLERANCE: f64 = 1.0;

/// Dominant and secondary roles, degree and betweenness.
pub fn describe_node(
    node: &str,
    t: usize,
    pi: &[f64],
    degree: usize,
    betweenness: f64,
    cfg: &TemplateConfig,
) -> (String, Vec<StructuralClaim>) {
    let base = StructuralClaim::about(t).node(node);
    let dominant = dominant_role(pi);
    let dom_pct = percent(pi[dominant.index()]);
    let mut claims = vec![base.clone().role(dominant).number(
        ClaimKind::DominantRolePct,
        dom_pct,
        ROUNDING_TOLERANCE,
    )];
    let mut text = format!("Node {node} shows dominant {dominant} characteristics ({dom_pct}%)");

    let mut secondary: Vec<Role> = Role::ALL
        .into_iter()
        .filter(|&r| r != dominant && pi[r.index()] >= cfg.theta)
        .collect();
    secondary.sort_by(|a, b| pi[b.index()].total_cmp(&pi[a.index()]).then(a.cmp(b)));
    for (n, role) in secondary.iter().enumerate() {
        let pct = percent(pi[role.index()]);
        let joiner = if n == 0 { " with secondary" } else { " and" };
        let _ = write!(text, "{joiner} {role} traits ({pct}%)");
        claims.push(base.clone().role(*role).number(
            ClaimKind::SecondaryRolePct,
            pct,
            ROUNDING_TOLERANCE,
        ));
    }
    let links = if degree == 1 {
        "connection"
    } else {
        "connections"
    };
    let _ = write!(
        text,
        ". It has {degree} {links} and betweenness centrality {betweenness:.2}."
    );
    claims.push(
        base.clone()
            .number(ClaimKind::NodeDegree, degree as f64, 0.0),
    );
    let rounded = (betweenness * 100.0).round() / 100.0;
    claims.push(base.number(ClaimKind::NodeBetweenness, rounded, BETWEENNESS_TOLERANCE));
    (text, claims)
}

fn positional_phrase(role: Role) -> &'static str {
    match role {
        Role::Leader => "As one of its leading members, the node anchors the community core.",
        Role::Contributor => {
            "As an active contributor, the node reinforces dense ties inside the community."
        }
        Role::Wanderer => "The node sits on the periphery and attaches only loosely to the core.",
        Role::Connector => "The node bridges this community to others in the network.",
        Role::Newcomer => {
            "The node is a recent arrival that has yet to settle into a fixed position."
        }
    }
}

/// Community size, five composition percentages and the node's position.
pub fn describe_community(
    node: &str,
    t: usize,
    community: usize,
    composition: &CommunityComposition,
    node_role: Role,
) -> Result<(String, Vec<StructuralClaim>), SemanticsError> {
    let gamma = composition
        .gamma
        .ok_or(SemanticsError::EmptyCommunity(community))?;
    let base = StructuralClaim::about(t).node(node).community(community);
    let size = composition.size;
    let members = if size == 1 { "member" } else { "members" };
    let mut claims = vec![base
        .clone()
        .number(ClaimKind::CommunitySize, size as f64, 0.0)];
    let parts: Vec<String> = Role::ALL
        .iter()
        .map(|&r| {
            let pct = percent(gamma[r.index()]);
            claims.push(base.clone().role(r).number(
                ClaimKind::CompositionPct,
                pct,
                COMPOSITION_TOLERANCE,
            ));
            format!("{pct}% {}", r.plural())
        })
        .collect();
    let text = format!(
        "Node {node} belongs to community C{community} ({size} {members}) with composition [{}]. {}",
        parts.join(", "),
        positional_phrase(node_role)
    );
    Ok((text, claims))
}

/// Node-side history for the evolution paragraph.
#[derive(Clone, Debug, PartialEq)]
pub struct RoleHistory {
    pub role: Role,
    /// Affinity to `role` one snapshot earlier, if the node existed then.
    pub previous: Option<f64>,
    pub current: f64,
}

fn event_phrase(label: EventLabel, community: &str) -> String {
    match label {
        EventLabel::Birth => format!("Community {community} formed in the latest step"),
        EventLabel::Death => format!("Community {community} dissolved in the latest step"),
        EventLabel::Growth => format!("Community {community} went through a growth phase"),
        EventLabel::Contraction => format!("Community {community} contracted around its core"),
        EventLabel::Split => format!("Community {community} split apart"),
        EventLabel::Merge => format!("Community {community} merged with another community"),
        EventLabel::Stable => format!("Community {community} remained stable"),
    }
}

/// Event, largest composition shift and the node's role trend; `None`
/// for `event` means the snapshot has no predecessor.
pub fn describe_evolution(
    node: &str,
    t: usize,
    event: Option<&CommunityEvent>,
    history: &RoleHistory,
) -> (String, Vec<StructuralClaim>) {
    let Some(event) = event else {
        return (
            format!("No history is available for node {node} before this snapshot."),
            Vec::new(),
        );
    };
    let mut base = StructuralClaim::about(t).node(node);
    base.community = event.community_t1;
    base.previous_community = event.community_t;
    let name = match (event.community_t1, event.community_t) {
        (Some(k), _) => format!("C{k}"),
        (None, Some(p)) => format!("C{p}"),
        (None, None) => "?".to_string(),
    };
    let mut claims = vec![base.clone().event(event.label)];
    let mut text = event_phrase(event.label, &name);

    if event.label == EventLabel::Death {
        text.push_str(", and 0 of its members remain");
        claims.push(base.clone().number(ClaimKind::CommunitySize, 0.0, 0.0));
    }
    let g = &event.delta.delta_gamma;
    let mut top = 0;
    for r in 1..ROLE_COUNT {
        if g[r].abs() > g[top].abs() {
            top = r;
        }
    }
    let shift = percent(g[top]);
    if shift == 0.0 {
        text.push_str(" with no significant change in role composition.");
    } else {
        let role = Role::from_index(top).expect("five roles");
        let dir = if shift > 0.0 { "rising" } else { "falling" };
        let _ = write!(
            text,
            " with the {role} share {dir} by {} points.",
            shift.abs()
        );
        claims.push(base.clone().role(role).number(
            ClaimKind::CompositionShift,
            shift,
            ROUNDING_TOLERANCE,
        ));
    }
    match history.previous {
        Some(prev) => {
            let (a, b) = (percent(prev), percent(history.current));
            let _ = write!(
                text,
                " Its {} affinity moved from {a}% to {b}%.",
                history.role
            );
            claims.push(base.role(history.role).trend(a, b));
        }
        None => {
            let _ = write!(text, " Node {node} appears for the first time.");
        }
    }
    (text, claims)
}

/// Precomputed per-snapshot state for rendering many descriptions.
pub struct DescriptionContext<'g> {
    graph: &'g DynamicGraph,
    t: usize,
    labels: &'g [usize],
    pi: &'g Matrix,
    previous: Option<(&'g [usize], &'g Matrix)>,
    compositions: Vec<CommunityComposition>,
    events: Vec<CommunityEvent>,
    profiler: SnapshotProfiler<'g>,
    config: TemplateConfig,
}

impl<'g> DescriptionContext<'g> {
    /// `labels`/`pi` belong to snapshot `t`; `previous` to `t - 1`.
    pub fn new(
        graph: &'g DynamicGraph,
        t: usize,
        labels: &'g [usize],
        pi: &'g Matrix,
        previous: Option<(&'g [usize], &'g Matrix)>,
        thresholds: &EventThresholds,
        config: TemplateConfig,
    ) -> Result<Self, SemanticsError> {
        config.validate()?;
        let snap = graph.snapshot(t)?;
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let comps = compositions(pi, labels, k)?;
        let events = match (previous, t.checked_sub(1)) {
            (Some((prev_labels, prev_pi)), Some(pt)) => {
                let prev_snap = graph.snapshot(pt)?;
                track_events(
                    &PartitionView {
                        ids: prev_snap.ids(),
                        labels: prev_labels,
                        pi: prev_pi,
                    },
                    &PartitionView {
                        ids: snap.ids(),
                        labels,
                        pi,
                    },
                    thresholds,
                )
            }
            _ => Vec::new(),
        };
        Ok(Self {
            graph,
            t,
            labels,
            pi,
            previous: if t > 0 { previous } else { None },
            compositions: comps,
            events,
            profiler: SnapshotProfiler::new(graph, t)?,
            config,
        })
    }

    pub fn events(&self) -> &[CommunityEvent] {
        &self.events
    }

    pub fn compositions(&self) -> &[CommunityComposition] {
        &self.compositions
    }

    /// Transition out of the node's previous community if it existed at
    /// `t - 1`, else the transition into its current community.
    fn event_for(&self, node: &str, current: usize) -> Option<&CommunityEvent> {
        let (prev_labels, _) = self.previous?;
        let prev_snap = self.graph.snapshot(self.t - 1).ok()?;
        if let Some(j) = prev_snap.index_of(node) {
            let pc = prev_labels[j];
            return self.events.iter().find(|e| e.community_t == Some(pc));
        }
        self.events
            .iter()
            .filter(|e| e.community_t1 == Some(current))
            .max_by(|a, b| {
                a.delta
                    .size_t
                    .cmp(&b.delta.size_t)
                    .then(b.community_t.cmp(&a.community_t))
            })
    }

    pub fn render(&self, node: &str) -> Result<SemanticDescription, SemanticsError> {
        let snap = self.graph.snapshot(self.t)?;
        let i = snap
            .index_of(node)
            .ok_or_else(|| SemanticsError::UnknownNode {
                node: node.to_string(),
                t: self.t,
            })?;
        let pi = self.pi.row(i);
        let (node_text, mut claims) = describe_node(
            node,
            self.t,
            pi,
            snap.degree(i),
            self.profiler.betweenness()[i],
            &self.config,
        );
        let c = self.labels[i];
        let role = dominant_role(pi);
        let (community_text, more) =
            describe_community(node, self.t, c, &self.compositions[c], role)?;
        claims.extend(more);

        let previous = self.previous.and_then(|(_, prev_pi)| {
            let prev_snap = self.graph.snapshot(self.t - 1).ok()?;
            prev_snap
                .index_of(node)
                .map(|j| prev_pi.get(j, role.index()))
        });
        let history = RoleHistory {
            role,
            previous,
            current: pi[role.index()],
        };
        let event = self.event_for(node, c);
        let (evolution_text, more) = describe_evolution(node, self.t, event, &history);
        claims.extend(more);
        Ok(SemanticDescription {
            node: node.to_string(),
            t: self.t,
            node_text,
            community_text,
            evolution_text,
            claims,
        })
    }
}
