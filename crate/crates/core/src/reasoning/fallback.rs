use serde::{Deserialize, Serialize};

use super::{CommunitySummary, Provenance, ReasoningError, ReasoningResult};
use crate::graph::Snapshot;
use crate::roles::{compositions, CommunityComposition, CommunityEvent, ROLE_COUNT};
use crate::tensor::{argmax, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FallbackConfig {
    /// Weights for compatibility, supply-demand, evolution, structure and
    /// temporal continuity, in that order.
    pub weights: [f64; 5],
    pub temperature: f64,
}

impl Default for FallbackConfig {
    fn default() -> Self {
        Self {
            weights: [0.20, 0.15, 0.15, 0.40, 0.10],
            temperature: 0.1,
        }
    }
}

impl FallbackConfig {
    pub fn validate(&self) -> Result<(), ReasoningError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(ReasoningError::Config(format!(
                "fallback temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ReasoningError::Config(
                "fallback weights must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Assignment and role state of the preceding snapshot.
#[derive(Clone, Copy, Debug)]
pub struct PreviousSnapshot<'a> {
    pub snapshot: &'a Snapshot,
    pub labels: &'a [usize],
    pub pi: &'a Matrix,
}

/// Everything the reasoners need about one snapshot, computed once.
#[derive(Clone, Debug)]
pub struct SnapshotEvidence<'a> {
    pub snapshot: &'a Snapshot,
    /// Structural labels (argmax of the soft assignment).
    pub labels: &'a [usize],
    pub pi: &'a Matrix,
    pub k: usize,
    pub compositions: Vec<CommunityComposition>,
    /// `gamma_k(t) - gamma_k(t-1)`; zero where either side is empty.
    pub delta_gamma: Vec<[f64; ROLE_COUNT]>,
    /// Mean composition over non-empty communities.
    pub mean_gamma: [f64; ROLE_COUNT],
    pub previous: Option<PreviousSnapshot<'a>>,
    has_previous_compositions: bool,
}

impl<'a> SnapshotEvidence<'a> {
    pub fn new(
        snapshot: &'a Snapshot,
        labels: &'a [usize],
        pi: &'a Matrix,
        k: usize,
        previous: Option<PreviousSnapshot<'a>>,
    ) -> Result<Self, ReasoningError> {
        if labels.iter().any(|&l| l >= k) {
            return Err(ReasoningError::Config(format!(
                "labels must be below K = {k}"
            )));
        }
        let comps = compositions(pi, labels, k)?;
        let prev_comps = match previous {
            Some(p) => Some(compositions(
                p.pi,
                p.labels,
                k.max(p.labels.iter().max().map_or(0, |m| m + 1)),
            )?),
            None => None,
        };
        let delta_gamma = (0..k)
            .map(|c| {
                let now = comps[c].gamma;
                let before = prev_comps
                    .as_ref()
                    .and_then(|p| p.get(c))
                    .and_then(|p| p.gamma);
                match (now, before) {
                    (Some(a), Some(b)) => std::array::from_fn(|r| a[r] - b[r]),
                    _ => [0.0; ROLE_COUNT],
                }
            })
            .collect();
        let live: Vec<[f64; ROLE_COUNT]> = comps.iter().filter_map(|c| c.gamma).collect();
        let mut mean_gamma = [0.0; ROLE_COUNT];
        for g in &live {
            for r in 0..ROLE_COUNT {
                mean_gamma[r] += g[r] / live.len() as f64;
            }
        }
        Ok(Self {
            snapshot,
            labels,
            pi,
            k,
            compositions: comps,
            delta_gamma,
            mean_gamma,
            previous,
            has_previous_compositions: prev_comps.is_some(),
        })
    }

    /// Prompt-facing summaries; `events` attaches the latest event of each
    /// community (matched on its id at this snapshot).
    pub fn summaries(&self, events: &[CommunityEvent]) -> Vec<CommunitySummary> {
        (0..self.k)
            .map(|c| CommunitySummary {
                id: c,
                size: self.compositions[c].size,
                gamma: self.compositions[c].gamma,
                delta_gamma: self.has_previous_compositions.then(|| self.delta_gamma[c]),
                event: events
                    .iter()
                    .find(|e| e.community_t1 == Some(c))
                    .map(|e| e.label),
            })
            .collect()
    }

    fn previous_row(&self, i: usize) -> Option<(usize, &[f64])> {
        let p = self.previous?;
        let j = p.snapshot.index_of(self.snapshot.id(i))?;
        Some((p.labels[j], p.pi.row(j)))
    }
}

/// The five per-community evidence terms for one node.
#[derive(Clone, Debug, PartialEq)]
pub struct FallbackTerms {
    pub compatibility: Vec<f64>,
    pub supply_demand: Vec<f64>,
    pub evolution: Vec<f64>,
    pub structural: Vec<f64>,
    pub temporal: Vec<f64>,
    pub previous_label: Option<usize>,
    pub edges_into: Vec<usize>,
    pub degree: usize,
}

impl FallbackTerms {
    pub fn compute(ev: &SnapshotEvidence, i: usize) -> Self {
        let pi = ev.pi.row(i);
        let previous = ev.previous_row(i);
        let delta_pi: [f64; ROLE_COUNT] = match previous {
            Some((_, before)) => std::array::from_fn(|r| pi[r] - before[r]),
            None => [0.0; ROLE_COUNT],
        };
        let degree = ev.snapshot.degree(i);
        let mut edges_into = vec![0usize; ev.k];
        for &j in ev.snapshot.neighbors(i) {
            edges_into[ev.labels[j]] += 1;
        }
        let mut terms = FallbackTerms {
            compatibility: Vec::with_capacity(ev.k),
            supply_demand: Vec::with_capacity(ev.k),
            evolution: Vec::with_capacity(ev.k),
            structural: Vec::with_capacity(ev.k),
            temporal: Vec::with_capacity(ev.k),
            previous_label: previous.map(|p| p.0),
            edges_into,
            degree,
        };
        for c in 0..ev.k {
            let gamma = ev.compositions[c].gamma_or_zero();
            terms
                .compatibility
                .push((0..ROLE_COUNT).map(|r| pi[r] * gamma[r]).sum());
            terms.supply_demand.push(
                (0..ROLE_COUNT)
                    .map(|r| pi[r] * (ev.mean_gamma[r] - gamma[r]).max(0.0))
                    .sum(),
            );
            terms
                .evolution
                .push(positive_cosine(&delta_pi, &ev.delta_gamma[c]));
            terms.structural.push(if degree == 0 {
                0.0
            } else {
                terms.edges_into[c] as f64 / degree as f64
            });
            terms.temporal.push(if terms.previous_label == Some(c) {
                1.0
            } else {
                0.0
            });
        }
        terms
    }

    pub fn scores(&self, weights: &[f64; 5]) -> Vec<f64> {
        (0..self.compatibility.len())
            .map(|c| {
                weights[0] * self.compatibility[c]
                    + weights[1] * self.supply_demand[c]
                    + weights[2] * self.evolution[c]
                    + weights[3] * self.structural[c]
                    + weights[4] * self.temporal[c]
            })
            .collect()
    }
}

fn positive_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).max(0.0)
    }
}

fn softmax(scores: &[f64], temperature: f64) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores
        .iter()
        .map(|s| ((s - max) / temperature).exp())
        .collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// Offline reasoner: a fixed weighted score per community, one term per
/// reasoning step, turned into probabilities by a tempered softmax.
pub fn deterministic_reason(
    ev: &SnapshotEvidence,
    i: usize,
    config: &FallbackConfig,
) -> ReasoningResult {
    let terms = FallbackTerms::compute(ev, i);
    let q = softmax(&terms.scores(&config.weights), config.temperature);
    let best = argmax(&q);
    let previous = match terms.previous_label {
        Some(p) => format!("previously in C{p}"),
        None => "no previous assignment".to_string(),
    };
    let steps = vec![
        format!(
            "Role distribution overlaps the composition of C{best} by {:.3}.",
            terms.compatibility[best]
        ),
        format!(
            "Roles C{best} is short of, weighted by the node's affinities: {:.3}.",
            terms.supply_demand[best]
        ),
        format!(
            "Alignment of the node's role change with the composition change of C{best}: {:.3}.",
            terms.evolution[best]
        ),
        format!(
            "{} of {} connections lead into C{best} (share {:.3}).",
            terms.edges_into[best], terms.degree, terms.structural[best]
        ),
        format!(
            "Node was {previous}; continuity term for C{best}: {:.3}.",
            terms.temporal[best]
        ),
    ];
    let confidence = q[best];
    ReasoningResult {
        q,
        steps,
        confidence,
        provenance: Provenance::Fallback,
    }
}
