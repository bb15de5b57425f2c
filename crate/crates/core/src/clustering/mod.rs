//! Soft community assignment and the clustering objective: a linear-time
//! modularity loss over embeddings (checked against a dense trace oracle)
//! and a temporal smoothness term for nodes that persist between snapshots.

mod centroids;

pub use centroids::{kmeans, kmeans_plus_plus};

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{structural_change, DynamicGraph, GraphError, Snapshot};
use crate::tensor::{Matrix, Tape, TensorError, Var};

/// Largest snapshot the dense oracle will materialize.
pub const ORACLE_NODE_LIMIT: usize = 500;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("need at least two communities, got {0}")]
    TooFewCommunities(usize),
    #[error("oracle is limited to {ORACLE_NODE_LIMIT} nodes, snapshot has {0}")]
    OracleTooLarge(usize),
    #[error("modularity is undefined on a snapshot without edges")]
    NoEdges,
    #[error("invalid loss weights: {0}")]
    Weights(String),
}

/// Similarity used inside the modularity loss. Only `Dot` reproduces the
/// trace form exactly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Similarity {
    #[default]
    Dot,
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentHead {
    /// `K x d_c`.
    pub centroids: Matrix,
    pub temperature: f64,
}

impl AssignmentHead {
    pub fn new(centroids: Matrix, temperature: f64) -> Result<Self, ClusterError> {
        if !(temperature > 0.0) {
            return Err(ClusterError::Temperature(temperature));
        }
        if centroids.rows() < 2 {
            return Err(ClusterError::TooFewCommunities(centroids.rows()));
        }
        Ok(Self {
            centroids,
            temperature,
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    /// Value-level soft assignment.
    pub fn assign(&self, z_comm: &Matrix) -> Result<Matrix, ClusterError> {
        let mut tape = Tape::new();
        let z = tape.constant(z_comm.clone());
        let mu = tape.constant(self.centroids.clone());
        let c = soft_assign(&mut tape, z, mu, self.temperature)?;
        Ok(tape.value(c).clone())
    }
}

/// `C_ij = softmax_j(<z_i, μ_j> / τ_c)`.
pub fn soft_assign(
    tape: &mut Tape,
    z_comm: Var,
    centroids: Var,
    temperature: f64,
) -> Result<Var, ClusterError> {
    if !(temperature > 0.0) {
        return Err(ClusterError::Temperature(temperature));
    }
    let mt = tape.transpose(centroids)?;
    let logits = tape.matmul(z_comm, mt)?;
    let scaled = tape.scalar_mul(logits, 1.0 / temperature)?;
    Ok(tape.row_softmax(scaled)?)
}

/// Edge endpoints and degrees of one snapshot, shared by every loss
/// evaluation on it.
#[derive(Clone, Debug)]
pub struct EdgeIndex {
    pub nodes: usize,
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    /// `|V| x 1`.
    pub degrees: Matrix,
}

impl EdgeIndex {
    pub fn new(snapshot: &Snapshot) -> Self {
        let (src, dst): (Vec<usize>, Vec<usize>) = snapshot.edges().iter().copied().unzip();
        let degrees = snapshot.degrees().into_iter().map(|d| d as f64).collect();
        Self {
            nodes: snapshot.node_count(),
            src: src.into(),
            dst: dst.into(),
            degrees: Matrix::column(degrees),
        }
    }

    pub fn edge_count(&self) -> usize {
        self.src.len()
    }
}

/// `-Σ_{(i,j) ∈ E, both orientations} sim(z_i, z_j) + ‖Σ_i d_i z_i‖² / 2|E|`,
/// in `O(|E| + |V|·d_c)`. With [`Similarity::Dot`] this is `-Tr(Zᵀ B Z)`.
pub fn modularity_loss(
    tape: &mut Tape,
    edges: &EdgeIndex,
    z: Var,
    sim: Similarity,
) -> Result<Var, ClusterError> {
    let m = edges.edge_count();
    if m == 0 {
        log::warn!("modularity loss on an edgeless snapshot is 0");
        let zero = tape.constant(Matrix::zeros(1, 1));
        // keep the dependency on z so gradients are defined (and zero)
        let scaled = tape.scalar_mul(z, 0.0)?;
        let s = tape.sum_all(scaled)?;
        return Ok(tape.add(zero, s)?);
    }
    let z = match sim {
        Similarity::Dot => z,
        Similarity::Cosine => tape.normalize_rows(z)?,
    };
    let inner = tape.edge_inner_sum(z, edges.src.clone(), edges.dst.clone())?;
    let d = tape.constant(edges.degrees.transpose());
    let weighted = tape.matmul(d, z)?;
    finish_modularity(tape, inner, weighted, m)
}

/// [`modularity_loss`] with the degree-weighted sum `Σ_i d_i z_i` estimated
/// from the rows in `sample` (drawn uniformly, with replacement allowed),
/// scaled by `|V| / |sample|`. The edge term stays exact.
pub fn modularity_loss_sampled(
    tape: &mut Tape,
    edges: &EdgeIndex,
    z: Var,
    sim: Similarity,
    sample: &[usize],
) -> Result<Var, ClusterError> {
    let m = edges.edge_count();
    if m == 0 || sample.is_empty() {
        return modularity_loss(tape, edges, z, sim);
    }
    let z = match sim {
        Similarity::Dot => z,
        Similarity::Cosine => tape.normalize_rows(z)?,
    };
    let inner = tape.edge_inner_sum(z, edges.src.clone(), edges.dst.clone())?;
    let rows = tape.gather_rows(z, sample.iter().copied().collect())?;
    let scale = edges.nodes as f64 / sample.len() as f64;
    let d = Matrix::row_vector(
        sample
            .iter()
            .map(|&i| scale * edges.degrees.get(i, 0))
            .collect(),
    );
    let d = tape.constant(d);
    let weighted = tape.matmul(d, rows)?;
    finish_modularity(tape, inner, weighted, m)
}

fn finish_modularity(
    tape: &mut Tape,
    inner: Var,
    weighted: Var,
    m: usize,
) -> Result<Var, ClusterError> {
    let penalty = tape.l2norm_sq(weighted)?;
    let penalty = tape.scalar_mul(penalty, 1.0 / (2.0 * m as f64))?;
    let attraction = tape.scalar_mul(inner, -2.0)?;
    Ok(tape.add(attraction, penalty)?)
}

/// `-Tr(Zᵀ B Z)` with `B = A − d dᵀ / 2|E|` built densely.
pub fn modularity_trace_oracle(snapshot: &Snapshot, z: &Matrix) -> Result<f64, ClusterError> {
    let n = snapshot.node_count();
    if n > ORACLE_NODE_LIMIT {
        return Err(ClusterError::OracleTooLarge(n));
    }
    let m = snapshot.edge_count();
    if m == 0 {
        return Err(ClusterError::NoEdges);
    }
    if z.rows() != n {
        return Err(TensorError::ShapeMismatch {
            op: "modularity_trace_oracle",
            left: [n, n],
            right: z.shape(),
        }
        .into());
    }
    let deg = snapshot.degrees();
    let mut b = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let a = if snapshot.has_edge(i, j) { 1.0 } else { 0.0 };
            b.set(i, j, a - (deg[i] * deg[j]) as f64 / (2 * m) as f64);
        }
    }
    let bz = b.matmul(z)?;
    let trace: f64 = z.data().iter().zip(bz.data()).map(|(x, y)| x * y).sum();
    Ok(-trace)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha_sens: f64,
    pub alpha_blend: f64,
    pub tau_conf: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.2,
            alpha_sens: 1.0,
            alpha_blend: 0.7,
            tau_conf: 0.8,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), ClusterError> {
        let fail = |m: &str| Err(ClusterError::Weights(m.to_string()));
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return fail("lambda1 must be finite and >= 0");
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return fail("lambda2 must be finite and >= 0");
        }
        if !(self.alpha_sens >= 0.0 && self.alpha_sens.is_finite()) {
            return fail("alpha_sens must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.alpha_blend) {
            return fail("alpha_blend must lie in [0, 1]");
        }
        if !(self.tau_conf > 0.0 && self.tau_conf < 1.0) {
            return fail("tau_conf must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Previous-snapshot assignments for nodes present at both times.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalContext {
    /// Assignment rows at `t - 1`, treated as constants.
    pub c_prev: Matrix,
    /// `(row at t, row at t - 1)` for every persistent node.
    pub pairs: Vec<(usize, usize)>,
    /// Structural change of each paired node.
    pub deltas: Vec<f64>,
}

impl TemporalContext {
    /// Aligns snapshot positions `t - 1` and `t` by node id.
    pub fn between(graph: &DynamicGraph, t: usize, c_prev: Matrix) -> Result<Self, ClusterError> {
        let prev = graph.snapshot(t.checked_sub(1).ok_or(GraphError::SnapshotOutOfRange(0))?)?;
        let cur = graph.snapshot(t)?;
        let mut pairs = Vec::new();
        let mut deltas = Vec::new();
        for (i, id) in cur.ids().iter().enumerate() {
            if let Some(j) = prev.index_of(id) {
                pairs.push((i, j));
                deltas.push(structural_change(graph, t, id)?);
            }
        }
        Ok(Self {
            c_prev,
            pairs,
            deltas,
        })
    }
}

/// Mean over persistent nodes of `‖C_t,i − C_{t−1},i‖² · exp(−α_sens δ_i)`.
pub fn temporal_loss(
    tape: &mut Tape,
    c_t: Var,
    ctx: &TemporalContext,
    alpha_sens: f64,
) -> Result<Var, ClusterError> {
    let p = ctx.pairs.len();
    if p == 0 {
        log::warn!("no persistent nodes; temporal loss is 0");
        let scaled = tape.scalar_mul(c_t, 0.0)?;
        return Ok(tape.sum_all(scaled)?);
    }
    let k = tape.shape(c_t)[1];
    if ctx.c_prev.cols() != k {
        return Err(TensorError::ShapeMismatch {
            op: "temporal_loss",
            left: tape.shape(c_t),
            right: ctx.c_prev.shape(),
        }
        .into());
    }
    let cur_idx: Arc<[usize]> = ctx.pairs.iter().map(|&(i, _)| i).collect();
    let mut prev_rows = Matrix::zeros(p, k);
    for (r, &(_, j)) in ctx.pairs.iter().enumerate() {
        prev_rows.row_mut(r).copy_from_slice(ctx.c_prev.row(j));
    }
    let cur = tape.gather_rows(c_t, cur_idx)?;
    let prev = tape.constant(prev_rows);
    let diff = tape.sub(cur, prev)?;
    let sq = tape.hadamard(diff, diff)?;
    let per_node = tape.row_sum(sq)?;
    let weights = ctx
        .deltas
        .iter()
        .map(|d| (-alpha_sens * d).exp() / p as f64)
        .collect();
    let w = tape.constant(Matrix::column(weights));
    Ok(tape.dot(per_node, w)?)
}

/// Tape handles of the clustering objective and its parts.
#[derive(Clone, Copy, Debug)]
pub struct ClusterLoss {
    pub total: Var,
    pub modularity: Var,
    pub temporal: Option<Var>,
}

/// `L_mod + λ1 · L_temp`; the temporal part is absent at the first snapshot.
pub fn clustering_objective(
    tape: &mut Tape,
    edges: &EdgeIndex,
    z_comm: Var,
    c_t: Var,
    temporal: Option<&TemporalContext>,
    weights: &LossWeights,
    sim: Similarity,
) -> Result<ClusterLoss, ClusterError> {
    let modularity = modularity_loss(tape, edges, z_comm, sim)?;
    let Some(ctx) = temporal else {
        return Ok(ClusterLoss {
            total: modularity,
            modularity,
            temporal: None,
        });
    };
    let temp = temporal_loss(tape, c_t, ctx, weights.alpha_sens)?;
    let scaled = tape.scalar_mul(temp, weights.lambda1)?;
    Ok(ClusterLoss {
        total: tape.add(modularity, scaled)?,
        modularity,
        temporal: Some(temp),
    })
}
