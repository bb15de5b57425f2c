//! Planted-partition dynamic benchmarks with four event families.
//!
//! Snapshot 0 is a planted-partition graph. Each later snapshot first
//! mutates the partition according to the configured event family and then
//! resamples every edge under the new partition. All randomness comes from
//! one seeded ChaCha stream, and every applied event is logged so that the
//! truth labels can be audited.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DynamicGraph, GraphError, Snapshot};

/// Smallest community the generator will create or leave behind.
pub const MIN_COMMUNITY_SIZE: usize = 5;

const EXPAND_CONTRACT_FRACTION: f64 = 0.25;
const HIDE_DURATION: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    /// Birth-Death.
    BD,
    /// Expand-Contract.
    EC,
    /// Disappear-Reappear.
    DR,
    /// Merge-Split.
    MS,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EventKind::BD => "BD",
            EventKind::EC => "EC",
            EventKind::DR => "DR",
            EventKind::MS => "MS",
        };
        f.write_str(s)
    }
}

impl FromStr for EventKind {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "BD" => Ok(EventKind::BD),
            "EC" => Ok(EventKind::EC),
            "DR" => Ok(EventKind::DR),
            "MS" => Ok(EventKind::MS),
            other => Err(GraphError::InvalidConfig(format!(
                "unknown event kind `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub event_kind: EventKind,
    pub n_nodes: usize,
    pub n_communities: usize,
    pub n_snapshots: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub event_rate: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            event_kind: EventKind::BD,
            n_nodes: 200,
            n_communities: 5,
            n_snapshots: 10,
            p_in: 0.3,
            p_out: 0.01,
            event_rate: 0.2,
            seed: 1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |msg: String| Err(GraphError::InvalidConfig(msg));
        if !(0.0 <= self.p_out && self.p_out < self.p_in && self.p_in <= 1.0) {
            return bad(format!(
                "need 0 <= p_out < p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            ));
        }
        if self.n_communities < 2 {
            return bad(format!(
                "need at least 2 communities, got {}",
                self.n_communities
            ));
        }
        if self.n_snapshots < 2 {
            return bad(format!(
                "need at least 2 snapshots, got {}",
                self.n_snapshots
            ));
        }
        if !(0.0..=1.0).contains(&self.event_rate) {
            return bad(format!(
                "event_rate must lie in [0, 1], got {}",
                self.event_rate
            ));
        }
        if self.n_nodes < self.n_communities * MIN_COMMUNITY_SIZE {
            return bad(format!(
                "{} nodes cannot hold {} communities of at least {MIN_COMMUNITY_SIZE}",
                self.n_nodes, self.n_communities
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventAction {
    Birth,
    Death,
    Expand,
    Contract,
    Hide,
    Reappear,
    Merge,
    Split,
}

impl fmt::Display for EventAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EventAction::Birth => "BIRTH",
            EventAction::Death => "DEATH",
            EventAction::Expand => "EXPAND",
            EventAction::Contract => "CONTRACT",
            EventAction::Hide => "HIDE",
            EventAction::Reappear => "REAPPEAR",
            EventAction::Merge => "MERGE",
            EventAction::Split => "SPLIT",
        };
        f.write_str(s)
    }
}

/// One applied partition change.
///
/// Community id conventions: `Merge [absorbed, survivor]`,
/// `Split [source, new]`, everything else lists the affected community.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorEvent {
    pub t: usize,
    pub action: EventAction,
    pub communities: Vec<usize>,
}

impl fmt::Display for GeneratorEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EVT {} {}", self.t, self.action)?;
        for c in &self.communities {
            write!(f, " {c}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GeneratedGraph {
    pub graph: DynamicGraph,
    pub log: Vec<GeneratorEvent>,
    pub warnings: Vec<String>,
}

impl GeneratedGraph {
    /// Generator log in its line format.
    pub fn log_text(&self) -> String {
        self.log.iter().map(|e| format!("{e}\n")).collect()
    }
}

/// Samples an undirected planted-partition graph in `O(|V| + |E|)` expected
/// time using geometric skips over the candidate pairs of every block.
///
/// Communities listed in `hidden` get no internal edges.
pub fn planted_partition<R: Rng>(
    labels: &[usize],
    p_in: f64,
    p_out: f64,
    hidden: &[usize],
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let mut blocks: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (node, &c) in labels.iter().enumerate() {
        blocks.entry(c).or_default().push(node);
    }
    let members: Vec<&Vec<usize>> = blocks.values().collect();
    let ids: Vec<usize> = blocks.keys().copied().collect();
    let mut edges = Vec::new();
    for a in 0..members.len() {
        if !hidden.contains(&ids[a]) {
            let m = members[a].len() as u64;
            sample_pairs(m * m.saturating_sub(1) / 2, p_in, rng, |k| {
                let (i, j) = triangular_pair(k);
                edges.push((members[a][i as usize], members[a][j as usize]));
            });
        }
        for b in a + 1..members.len() {
            let (ma, mb) = (members[a].len() as u64, members[b].len() as u64);
            sample_pairs(ma * mb, p_out, rng, |k| {
                edges.push((members[a][(k / mb) as usize], members[b][(k % mb) as usize]));
            });
        }
    }
    for e in &mut edges {
        *e = (e.0.min(e.1), e.0.max(e.1));
    }
    edges.sort_unstable();
    edges
}

fn sample_pairs<R: Rng>(total: u64, p: f64, rng: &mut R, mut emit: impl FnMut(u64)) {
    if total == 0 || p <= 0.0 {
        return;
    }
    if p >= 1.0 {
        (0..total).for_each(emit);
        return;
    }
    let log_q = (1.0 - p).ln();
    let mut k: i64 = -1;
    loop {
        let r: f64 = rng.random();
        let skip = ((1.0 - r).ln() / log_q).floor();
        if !skip.is_finite() || skip > total as f64 {
            return;
        }
        k += skip as i64 + 1;
        if k as u64 >= total {
            return;
        }
        emit(k as u64);
    }
}

/// Maps `k` in `0..m(m-1)/2` to the pair `(i, j)` with `i < j`.
fn triangular_pair(k: u64) -> (u64, u64) {
    let mut j = ((1.0 + (1.0 + 8.0 * k as f64).sqrt()) / 2.0).floor() as u64;
    while j * (j - 1) / 2 > k {
        j -= 1;
    }
    while (j + 1) * j / 2 <= k {
        j += 1;
    }
    (k - j * (j - 1) / 2, j)
}

struct State {
    labels: Vec<usize>,
    next_id: usize,
    base_count: usize,
    /// `(community, snapshot at which it reappears)`
    hidden: Vec<(usize, usize)>,
}

impl State {
    fn communities(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (node, &c) in self.labels.iter().enumerate() {
            out.entry(c).or_default().push(node);
        }
        out
    }
}

/// Generates a labeled dynamic graph for the configured event family.
pub fn generate_synthetic(config: &GeneratorConfig) -> Result<GeneratedGraph, GraphError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_nodes;
    let ids: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut labels = vec![0; n];
    for (pos, &node) in order.iter().enumerate() {
        labels[node] = pos % config.n_communities;
    }
    let mut state = State {
        labels,
        next_id: config.n_communities,
        base_count: config.n_communities,
        hidden: Vec::new(),
    };

    let mut log = Vec::new();
    let mut warnings = Vec::new();
    let mut snapshots = Vec::with_capacity(config.n_snapshots);
    let mut previous_edges: Vec<(usize, usize)> = Vec::new();

    for t in 0..config.n_snapshots {
        if t > 0 {
            let mut reappear = Vec::new();
            state.hidden.retain(|&(c, at)| {
                if at == t {
                    reappear.push(c);
                    false
                } else {
                    true
                }
            });
            for c in reappear {
                log.push(GeneratorEvent {
                    t,
                    action: EventAction::Reappear,
                    communities: vec![c],
                });
            }
            let count = state.communities().len();
            let n_events = if config.event_rate <= 0.0 {
                0
            } else {
                ((config.event_rate * count as f64).round() as usize).max(1)
            };
            let adjacency = adjacency_lists(n, &previous_edges);
            for _ in 0..n_events {
                let outcome = match config.event_kind {
                    EventKind::BD => birth_death(&mut state, &mut rng),
                    EventKind::EC => expand_contract(&mut state, &adjacency, &mut rng),
                    EventKind::DR => disappear(&mut state, t, &mut rng),
                    EventKind::MS => merge_split(&mut state, &mut rng),
                };
                match outcome {
                    Ok((action, communities)) => log.push(GeneratorEvent {
                        t,
                        action,
                        communities,
                    }),
                    Err(msg) => warnings.push(format!("t={t}: {msg}")),
                }
            }
        }
        let hidden: Vec<usize> = state.hidden.iter().map(|&(c, _)| c).collect();
        let edges = planted_partition(&state.labels, config.p_in, config.p_out, &hidden, &mut rng);
        previous_edges = edges.clone();
        snapshots.push(Snapshot::new(
            t,
            ids.clone(),
            edges,
            None,
            Some(state.labels.clone()),
        )?);
    }
    for w in &warnings {
        log::warn!("generator: {w}");
    }
    Ok(GeneratedGraph {
        graph: DynamicGraph::new(snapshots)?,
        log,
        warnings,
    })
}

fn adjacency_lists(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    adj
}

type EventOutcome = Result<(EventAction, Vec<usize>), String>;

/// Chooses the growing action when the count is below its starting value,
/// the shrinking one above it, and flips a coin otherwise.
fn grow_or_shrink<R: Rng>(state: &State, rng: &mut R) -> bool {
    let count = state.communities().len();
    match count.cmp(&state.base_count) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => rng.random_bool(0.5),
    }
}

fn birth_death<R: Rng>(state: &mut State, rng: &mut R) -> EventOutcome {
    let communities = state.communities();
    let count = communities.len();
    if grow_or_shrink(state, rng) {
        let target = state.labels.len() / (count + 1);
        if target <= MIN_COMMUNITY_SIZE {
            return Err(format!("birth skipped: target size {target} too small"));
        }
        let mut remaining: BTreeMap<usize, usize> =
            communities.iter().map(|(&c, m)| (c, m.len())).collect();
        let mut pool: Vec<usize> = (0..state.labels.len()).collect();
        pool.shuffle(rng);
        let new_id = state.next_id;
        let mut taken = Vec::new();
        for node in pool {
            if taken.len() == target {
                break;
            }
            let c = state.labels[node];
            if remaining[&c] > MIN_COMMUNITY_SIZE {
                *remaining.get_mut(&c).expect("present") -= 1;
                taken.push(node);
            }
        }
        if taken.len() <= MIN_COMMUNITY_SIZE {
            return Err("birth skipped: not enough donor members".into());
        }
        for node in taken {
            state.labels[node] = new_id;
        }
        state.next_id += 1;
        Ok((EventAction::Birth, vec![new_id]))
    } else {
        if count <= 2 {
            return Err("death skipped: only two communities left".into());
        }
        let ids: Vec<usize> = communities.keys().copied().collect();
        let victim = ids[rng.random_range(0..ids.len())];
        let survivors: Vec<usize> = ids.iter().copied().filter(|&c| c != victim).collect();
        for node in &communities[&victim] {
            state.labels[*node] = survivors[rng.random_range(0..survivors.len())];
        }
        state.hidden.retain(|&(c, _)| c != victim);
        Ok((EventAction::Death, vec![victim]))
    }
}

fn expand_contract<R: Rng>(
    state: &mut State,
    adjacency: &[Vec<usize>],
    rng: &mut R,
) -> EventOutcome {
    let communities = state.communities();
    let ids: Vec<usize> = communities.keys().copied().collect();
    let target = ids[rng.random_range(0..ids.len())];
    let members = &communities[&target];
    let amount = ((members.len() as f64) * EXPAND_CONTRACT_FRACTION).round() as usize;
    if rng.random_bool(0.5) {
        // Contract: members with the largest share of outside neighbors leave.
        if members.len() < amount + MIN_COMMUNITY_SIZE || amount == 0 {
            return Err(format!("contract skipped: community {target} too small"));
        }
        let mut ranked: Vec<(f64, usize)> = members
            .iter()
            .map(|&v| {
                let nb = &adjacency[v];
                let outside = nb.iter().filter(|&&u| state.labels[u] != target).count();
                let share = if nb.is_empty() {
                    0.0
                } else {
                    outside as f64 / nb.len() as f64
                };
                (share, v)
            })
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let others: Vec<usize> = ids.iter().copied().filter(|&c| c != target).collect();
        for &(_, v) in ranked.iter().take(amount) {
            let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
            for &u in &adjacency[v] {
                if state.labels[u] != target {
                    *votes.entry(state.labels[u]).or_default() += 1;
                }
            }
            let dest = votes
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(&c, _)| c)
                .unwrap_or_else(|| others[rng.random_range(0..others.len())]);
            state.labels[v] = dest;
        }
        Ok((EventAction::Contract, vec![target]))
    } else {
        // Expand: outsiders with the most links into the community join it.
        let mut remaining: BTreeMap<usize, usize> =
            communities.iter().map(|(&c, m)| (c, m.len())).collect();
        let mut ranked: Vec<(usize, usize)> = (0..state.labels.len())
            .filter(|&v| state.labels[v] != target)
            .map(|v| {
                let inside = adjacency[v]
                    .iter()
                    .filter(|&&u| state.labels[u] == target)
                    .count();
                (inside, v)
            })
            .collect();
        ranked.shuffle(rng);
        ranked.sort_by_key(|r| std::cmp::Reverse(r.0));
        let mut moved = 0;
        for (_, v) in ranked {
            if moved == amount {
                break;
            }
            let c = state.labels[v];
            if remaining[&c] > MIN_COMMUNITY_SIZE {
                *remaining.get_mut(&c).expect("present") -= 1;
                state.labels[v] = target;
                moved += 1;
            }
        }
        if moved == 0 {
            return Err(format!("expand skipped: no donors for community {target}"));
        }
        Ok((EventAction::Expand, vec![target]))
    }
}

fn disappear<R: Rng>(state: &mut State, t: usize, rng: &mut R) -> EventOutcome {
    let communities = state.communities();
    let visible: Vec<usize> = communities
        .keys()
        .copied()
        .filter(|c| !state.hidden.iter().any(|&(h, _)| h == *c))
        .collect();
    if visible.len() <= 1 {
        return Err("hide skipped: no visible community left".into());
    }
    let c = visible[rng.random_range(0..visible.len())];
    state.hidden.push((c, t + HIDE_DURATION));
    Ok((EventAction::Hide, vec![c]))
}

fn merge_split<R: Rng>(state: &mut State, rng: &mut R) -> EventOutcome {
    let communities = state.communities();
    let ids: Vec<usize> = communities.keys().copied().collect();
    if grow_or_shrink(state, rng) {
        let eligible: Vec<usize> = ids
            .iter()
            .copied()
            .filter(|c| communities[c].len() >= 2 * MIN_COMMUNITY_SIZE)
            .collect();
        if eligible.is_empty() {
            return Err(format!(
                "split skipped: no community with at least {} members",
                2 * MIN_COMMUNITY_SIZE
            ));
        }
        let source = eligible[rng.random_range(0..eligible.len())];
        let mut members = communities[&source].clone();
        members.shuffle(rng);
        let new_id = state.next_id;
        state.next_id += 1;
        for &v in &members[..members.len() / 2] {
            state.labels[v] = new_id;
        }
        Ok((EventAction::Split, vec![source, new_id]))
    } else {
        if ids.len() <= 2 {
            return Err("merge skipped: only two communities left".into());
        }
        let a = ids[rng.random_range(0..ids.len())];
        let rest: Vec<usize> = ids.iter().copied().filter(|&c| c != a).collect();
        let b = rest[rng.random_range(0..rest.len())];
        let (absorbed, survivor) = if communities[&a].len() <= communities[&b].len() {
            (a, b)
        } else {
            (b, a)
        };
        for &v in &communities[&absorbed] {
            state.labels[v] = survivor;
        }
        state.hidden.retain(|&(c, _)| c != absorbed);
        Ok((EventAction::Merge, vec![absorbed, survivor]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangular_pairs_enumerate_in_order() {
        let mut k = 0;
        for j in 1..30u64 {
            for i in 0..j {
                assert_eq!(triangular_pair(k), (i, j));
                k += 1;
            }
        }
    }

    #[test]
    fn full_probability_gives_complete_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let labels = vec![0, 0, 0, 1, 1];
        let edges = planted_partition(&labels, 1.0, 0.0, &[], &mut rng);
        assert_eq!(edges, vec![(0, 1), (0, 2), (1, 2), (3, 4)]);
        let hidden = planted_partition(&labels, 1.0, 0.0, &[0], &mut rng);
        assert_eq!(hidden, vec![(3, 4)]);
    }

    #[test]
    fn edge_density_tracks_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let labels: Vec<usize> = (0..400).map(|i| i % 2).collect();
        let edges = planted_partition(&labels, 0.2, 0.02, &[], &mut rng);
        let inside = edges
            .iter()
            .filter(|&&(a, b)| labels[a] == labels[b])
            .count() as f64;
        let across = edges.len() as f64 - inside;
        let pairs_in = 2.0 * 200.0 * 199.0 / 2.0;
        assert!((inside / pairs_in - 0.2).abs() < 0.01);
        assert!((across / 40000.0 - 0.02).abs() < 0.005);
    }

    #[test]
    fn config_validation() {
        let c = GeneratorConfig {
            p_out: 0.5,
            ..GeneratorConfig::default()
        };
        assert!(generate_synthetic(&c).is_err());
        let c = GeneratorConfig {
            n_snapshots: 1,
            ..GeneratorConfig::default()
        };
        assert!(generate_synthetic(&c).is_err());
        assert!("xx".parse::<EventKind>().is_err());
        assert_eq!("ms".parse::<EventKind>().unwrap(), EventKind::MS);
    }

    #[test]
    fn log_line_format() {
        let e = GeneratorEvent {
            t: 3,
            action: EventAction::Merge,
            communities: vec![1, 4],
        };
        assert_eq!(e.to_string(), "EVT 3 MERGE 1 4");
    }
}
