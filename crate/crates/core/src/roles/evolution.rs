use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{RoleError, ROLE_COUNT};
use crate::tensor::Matrix;

/// Mean role affinity of a community's members.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommunityComposition {
    /// `None` for an empty community.
    pub gamma: Option<[f64; ROLE_COUNT]>,
    pub size: usize,
}

impl CommunityComposition {
    pub fn empty() -> Self {
        Self {
            gamma: None,
            size: 0,
        }
    }

    /// Composition with undefined entries read as zero.
    pub fn gamma_or_zero(&self) -> [f64; ROLE_COUNT] {
        self.gamma.unwrap_or([0.0; ROLE_COUNT])
    }
}

fn check_rows(pi: &Matrix, labels: &[usize]) -> Result<(), RoleError> {
    if pi.rows() != labels.len() || pi.cols() != ROLE_COUNT {
        return Err(RoleError::Misaligned {
            labels: labels.len(),
            rows: pi.rows(),
        });
    }
    Ok(())
}

/// Composition of community `k` by a scan over its members.
pub fn community_composition(
    pi: &Matrix,
    labels: &[usize],
    k: usize,
) -> Result<CommunityComposition, RoleError> {
    check_rows(pi, labels)?;
    let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == k).collect();
    if members.is_empty() {
        return Ok(CommunityComposition::empty());
    }
    let mut gamma = [0.0; ROLE_COUNT];
    for &i in &members {
        for (g, v) in gamma.iter_mut().zip(pi.row(i)) {
            *g += v;
        }
    }
    for g in &mut gamma {
        *g /= members.len() as f64;
    }
    Ok(CommunityComposition {
        gamma: Some(gamma),
        size: members.len(),
    })
}

/// Compositions of communities `0..k` in one streaming pass.
pub fn compositions(
    pi: &Matrix,
    labels: &[usize],
    k: usize,
) -> Result<Vec<CommunityComposition>, RoleError> {
    check_rows(pi, labels)?;
    let mut sums = vec![[0.0; ROLE_COUNT]; k];
    let mut sizes = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            continue;
        }
        sizes[l] += 1;
        for (g, v) in sums[l].iter_mut().zip(pi.row(i)) {
            *g += v;
        }
    }
    Ok(sums
        .into_iter()
        .zip(sizes)
        .map(|(mut g, size)| {
            if size == 0 {
                return CommunityComposition::empty();
            }
            for v in &mut g {
                *v /= size as f64;
            }
            CommunityComposition {
                gamma: Some(g),
                size,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionDelta {
    pub delta_gamma: [f64; ROLE_COUNT],
    pub size_t: usize,
    pub size_t1: usize,
    /// Communities at `t + 1` that received at least `τ_min` members.
    pub component_count_t1: usize,
    /// Non-empty communities in the whole partition at `t` and `t + 1`.
    pub communities_t: usize,
    pub communities_t1: usize,
}

/// `Δγ = γ^{t+1} − γ^t` with sizes; partition-level counts are left at
/// zero and the component count is 1 for a non-empty successor.
pub fn composition_delta(from: &CommunityComposition, to: &CommunityComposition) -> EvolutionDelta {
    let (a, b) = (from.gamma_or_zero(), to.gamma_or_zero());
    EvolutionDelta {
        delta_gamma: std::array::from_fn(|r| b[r] - a[r]),
        size_t: from.size,
        size_t1: to.size,
        component_count_t1: usize::from(to.size > 0),
        communities_t: 0,
        communities_t1: 0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventLabel {
    Birth,
    Death,
    Growth,
    Contraction,
    Split,
    Merge,
    Stable,
}

impl EventLabel {
    pub fn name(self) -> &'static str {
        match self {
            EventLabel::Birth => "Birth",
            EventLabel::Death => "Death",
            EventLabel::Growth => "Growth",
            EventLabel::Contraction => "Contraction",
            EventLabel::Split => "Split",
            EventLabel::Merge => "Merge",
            EventLabel::Stable => "Stable",
        }
    }
}

impl fmt::Display for EventLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventThresholds {
    pub tau_min: usize,
    /// Band for Growth/Contraction/Merge shifts.
    pub shift: f64,
    /// Band for "stable" or "concentrating" leadership.
    pub leader: f64,
    /// Connector loss that signals a split.
    pub split: f64,
}

impl Default for EventThresholds {
    fn default() -> Self {
        Self {
            tau_min: 5,
            shift: 0.3,
            leader: 0.1,
            split: 0.5,
        }
    }
}

/// Checks Birth, Death, Split, Merge, Growth, Contraction in that order;
/// anything else is Stable.
pub fn classify_event(delta: &EvolutionDelta, thr: &EventThresholds) -> EventLabel {
    let g = &delta.delta_gamma;
    if delta.size_t == 0 && delta.size_t1 > thr.tau_min {
        EventLabel::Birth
    } else if delta.size_t > 0 && delta.size_t1 == 0 {
        EventLabel::Death
    } else if g[3] < -thr.split && delta.component_count_t1 > 1 {
        EventLabel::Split
    } else if g[3] > thr.shift && delta.communities_t1 < delta.communities_t {
        EventLabel::Merge
    } else if g[4] > thr.shift && g[0].abs() < thr.leader {
        EventLabel::Growth
    } else if g[2] < -thr.shift && g[0] > thr.leader {
        EventLabel::Contraction
    } else {
        EventLabel::Stable
    }
}

/// Labels and affinities of one snapshot, rows aligned with `ids`.
#[derive(Clone, Copy, Debug)]
pub struct PartitionView<'a> {
    pub ids: &'a [String],
    pub labels: &'a [usize],
    pub pi: &'a Matrix,
}

impl PartitionView<'_> {
    fn members(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.labels.iter().enumerate() {
            out.entry(l).or_default().push(i);
        }
        out
    }

    fn composition(&self, rows: &[usize]) -> CommunityComposition {
        let mut gamma = [0.0; ROLE_COUNT];
        for &i in rows {
            for (g, v) in gamma.iter_mut().zip(self.pi.row(i)) {
                *g += v;
            }
        }
        for g in &mut gamma {
            *g /= rows.len() as f64;
        }
        CommunityComposition {
            gamma: Some(gamma),
            size: rows.len(),
        }
    }
}

/// Overlap counts from each community at `t` into communities at `t + 1`.
fn overlaps(prev: &PartitionView, next: &PartitionView) -> BTreeMap<usize, BTreeMap<usize, usize>> {
    let next_label: HashMap<&str, usize> = next
        .ids
        .iter()
        .zip(next.labels)
        .map(|(id, &l)| (id.as_str(), l))
        .collect();
    let mut out: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (id, &l) in prev.ids.iter().zip(prev.labels) {
        let entry = out.entry(l).or_default();
        if let Some(&m) = next_label.get(id.as_str()) {
            *entry.entry(m).or_default() += 1;
        }
    }
    out
}

/// Successor of every community at `t` by maximum Jaccard overlap; ties go
/// to the larger intersection, then the lower community id. `None` when no
/// member survives into `t + 1`.
pub fn match_communities(
    prev: &PartitionView,
    next: &PartitionView,
) -> BTreeMap<usize, Option<usize>> {
    let prev_members = prev.members();
    let next_sizes: BTreeMap<usize, usize> = next
        .members()
        .into_iter()
        .map(|(k, v)| (k, v.len()))
        .collect();
    let mut out = BTreeMap::new();
    for (a, counts) in overlaps(prev, next) {
        let size_a = prev_members[&a].len();
        let mut best: Option<(f64, usize, usize)> = None;
        for (&b, &inter) in &counts {
            let jaccard = inter as f64 / (size_a + next_sizes[&b] - inter) as f64;
            let better = match best {
                None => true,
                Some((j, i, id)) => {
                    jaccard > j || (jaccard == j && (inter > i || (inter == i && b < id)))
                }
            };
            if better {
                best = Some((jaccard, inter, b));
            }
        }
        out.insert(a, best.map(|(_, _, b)| b));
    }
    out
}

/// One tracked community transition between consecutive snapshots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommunityEvent {
    pub community_t: Option<usize>,
    pub community_t1: Option<usize>,
    pub delta: EvolutionDelta,
    pub label: EventLabel,
}

/// Events for every community at `t` (matched forward) and for every
/// community at `t + 1` that no predecessor matched (birth candidates).
pub fn track_events(
    prev: &PartitionView,
    next: &PartitionView,
    thr: &EventThresholds,
) -> Vec<CommunityEvent> {
    let prev_members = prev.members();
    let next_members = next.members();
    let matches = match_communities(prev, next);
    let overlap = overlaps(prev, next);
    let (count_t, count_t1) = (prev_members.len(), next_members.len());
    let mut events = Vec::new();
    let mut matched = BTreeSet::new();
    for (&a, rows) in &prev_members {
        let from = prev.composition(rows);
        let target = matches.get(&a).copied().flatten();
        let to = match target {
            Some(b) => {
                matched.insert(b);
                next.composition(&next_members[&b])
            }
            None => CommunityComposition::empty(),
        };
        let mut delta = composition_delta(&from, &to);
        delta.component_count_t1 = overlap
            .get(&a)
            .map_or(0, |c| c.values().filter(|&&n| n >= thr.tau_min).count());
        delta.communities_t = count_t;
        delta.communities_t1 = count_t1;
        let label = classify_event(&delta, thr);
        events.push(CommunityEvent {
            community_t: Some(a),
            community_t1: target,
            delta,
            label,
        });
    }
    for (&b, rows) in &next_members {
        if matched.contains(&b) {
            continue;
        }
        let mut delta = composition_delta(&CommunityComposition::empty(), &next.composition(rows));
        delta.communities_t = count_t;
        delta.communities_t1 = count_t1;
        let label = classify_event(&delta, thr);
        events.push(CommunityEvent {
            community_t: None,
            community_t1: Some(b),
            delta,
            label,
        });
    }
    events
}
