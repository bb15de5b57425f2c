use std::path::Path;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PipelineError, RunConfig};
use crate::clustering::{
    kmeans, modularity_loss, modularity_loss_sampled, soft_assign, temporal_loss, AssignmentHead,
    EdgeIndex, TemporalContext,
};
use crate::encoder::{node_features, AttentionIndex, Encoder, EncoderVars};
use crate::graph::DynamicGraph;
use crate::metrics::modularity;
use crate::reasoning::consistency_loss;
use crate::roles::{
    init_prototypes, prototype_loss, role_affinity, role_priors, PrototypeSet, PrototypeVars,
};
use crate::tensor::{check_gradients, GradientCheck, Matrix, Tape, TensorError, Var};

const PROTOTYPE_SEED_SALT: u64 = 0x5eed_0001;

/// Every trainable quantity plus the config it was trained under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: RunConfig,
    pub encoder: Encoder,
    pub prototypes: PrototypeSet,
    /// One `K_t x d_c` centroid matrix per snapshot position, with
    /// `2 <= K_t <= k`. Empty until [`ModelState::fit_centroids`] runs.
    pub centroids: Vec<Matrix>,
}

/// Tape handles for a bound [`ModelState`].
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub encoder: EncoderVars,
    pub prototypes: PrototypeVars,
    pub centroids: Vec<Var>,
}

impl ModelVars {
    /// Same order as [`ModelState::parameters`].
    pub fn all(&self) -> Vec<Var> {
        let mut out = self.encoder.all();
        out.extend(self.prototypes.all());
        out.extend(self.centroids.iter().copied());
        out
    }

    pub fn from_slice(
        layers: usize,
        snapshots: usize,
        vars: &[Var],
    ) -> Result<Self, PipelineError> {
        let n = vars.len();
        if n < snapshots + 4 {
            return Err(PipelineError::Config(format!(
                "too few model variables ({n})"
            )));
        }
        let split = n - snapshots;
        Ok(Self {
            encoder: EncoderVars::from_slice(layers, &vars[..split - 4])?,
            prototypes: PrototypeVars::from_slice(&vars[split - 4..split]),
            centroids: vars[split..].to_vec(),
        })
    }
}

/// Encoder outputs of one snapshot before community assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub state: Matrix,
    pub z_comm: Matrix,
    pub pi: Matrix,
}

impl ModelState {
    pub fn new(config: &RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let encoder = Encoder::new(config.encoder.clone(), config.seed)?;
        let prototypes = init_prototypes(
            &role_priors(),
            config.encoder.d_r,
            config.prototype_sigma,
            config.seed ^ PROTOTYPE_SEED_SALT,
        )?;
        Ok(Self {
            config: config.clone(),
            encoder,
            prototypes,
            centroids: Vec::new(),
        })
    }

    /// Index of the first centroid matrix in [`ModelState::parameters`].
    pub fn centroid_offset(&self) -> usize {
        self.encoder.parameters().len() + 4
    }

    pub fn parameters(&self) -> Vec<&Matrix> {
        let mut out = self.encoder.parameters();
        out.extend(self.prototypes.parameters());
        out.extend(self.centroids.iter());
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.encoder.parameters_mut();
        out.extend(self.prototypes.parameters_mut());
        out.extend(self.centroids.iter_mut());
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            encoder: self.encoder.bind(tape),
            prototypes: self.prototypes.bind(tape),
            centroids: self
                .centroids
                .iter()
                .map(|c| tape.param(c.clone()))
                .collect(),
        }
    }

    /// Number of communities at snapshot position `t`.
    pub fn k_at(&self, t: usize) -> Option<usize> {
        self.centroids.get(t).map(Matrix::rows)
    }

    pub fn to_json(&self) -> Result<String, PipelineError> {
        serde_json::to_string(self).map_err(|e| PipelineError::Json(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let model: Self =
            serde_json::from_str(text).map_err(|e| PipelineError::Json(e.to_string()))?;
        model.config.validate()?;
        let d_c = model.config.encoder.d_c;
        if model
            .centroids
            .iter()
            .any(|c| c.cols() != d_c || c.rows() < 2 || c.rows() > model.config.k)
        {
            return Err(PipelineError::Json(
                "centroid shape does not match the stored config".into(),
            ));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        std::fs::write(path, self.to_json()?)
            .map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Encodes snapshot position `t` and derives role affinities and
    /// assignments against that snapshot's centroids.
    pub fn forward_snapshot(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        t: usize,
        snap: &PreparedSnapshot,
        s_prev: Var,
    ) -> Result<SnapshotOutputs, PipelineError> {
        let centroids = *vars.centroids.get(t).ok_or_else(|| {
            PipelineError::Config(format!("no centroids fitted for snapshot position {t}"))
        })?;
        let x = tape.constant(snap.x.clone());
        let enc = self
            .encoder
            .forward(tape, &vars.encoder, &snap.attention, x, s_prev)?;
        let protos = self.prototypes.forward(tape, &vars.prototypes)?;
        let pi = role_affinity(tape, enc.z_role, protos, self.config.tau_r)?;
        let c = soft_assign(tape, enc.z_comm, centroids, self.config.tau_c)?;
        Ok(SnapshotOutputs {
            state: enc.state,
            z_comm: enc.z_comm,
            pi,
            c,
        })
    }

    /// Value-level encoder pass over every snapshot with carried state.
    pub fn embed(&self, prepared: &PreparedGraph) -> Result<Vec<Embedding>, PipelineError> {
        let mut out: Vec<Embedding> = Vec::with_capacity(prepared.snapshots.len());
        for snap in &prepared.snapshots {
            let mut tape = Tape::new();
            let enc_vars = self.encoder.bind(&mut tape);
            let proto_vars = self.prototypes.bind(&mut tape);
            let s_prev = carried_state(out.last().map(|v| &v.state), snap, self.config.encoder.d);
            let s_prev = tape.constant(s_prev);
            let x = tape.constant(snap.x.clone());
            let enc = self
                .encoder
                .forward(&mut tape, &enc_vars, &snap.attention, x, s_prev)?;
            let protos = self.prototypes.forward(&mut tape, &proto_vars)?;
            let pi = role_affinity(&mut tape, enc.z_role, protos, self.config.tau_r)?;
            out.push(Embedding {
                state: tape.value(enc.state).clone(),
                z_comm: tape.value(enc.z_comm).clone(),
                pi: tape.value(pi).clone(),
            });
        }
        Ok(out)
    }

    /// [`ModelState::embed`] plus soft assignments from the fitted centroids.
    pub fn infer(&self, prepared: &PreparedGraph) -> Result<Vec<SnapshotValues>, PipelineError> {
        if self.centroids.len() != prepared.snapshots.len() {
            return Err(PipelineError::Config(format!(
                "{} centroid sets for {} snapshots",
                self.centroids.len(),
                prepared.snapshots.len()
            )));
        }
        self.embed(prepared)?
            .into_iter()
            .zip(&self.centroids)
            .map(|(e, mu)| {
                let c = AssignmentHead::new(mu.clone(), self.config.tau_c)?.assign(&e.z_comm)?;
                Ok(SnapshotValues {
                    state: e.state,
                    z_comm: e.z_comm,
                    pi: e.pi,
                    c,
                })
            })
            .collect()
    }

    /// Refits every snapshot's centroids by spherical k-means on its
    /// community embeddings. `K_t` ranges over `2..=k` and the count whose
    /// hard partition has the highest modularity wins (ties go to the
    /// smaller count). Centroid ids are matched greedily to the previous
    /// snapshot's centroids by cosine similarity so that ids persist.
    pub fn fit_centroids(
        &mut self,
        graph: &DynamicGraph,
        embeddings: &[Embedding],
        rng: &mut ChaCha8Rng,
    ) {
        let mut fitted: Vec<Matrix> = Vec::with_capacity(embeddings.len());
        for (snap, e) in graph.snapshots().iter().zip(embeddings) {
            let mut data = e.z_comm.clone();
            normalize_rows(&mut data);
            let k_max = self.config.k.min(data.rows()).max(2);
            let mut best: Option<(f64, Matrix)> = None;
            for k in 2..=k_max {
                let mut centers = kmeans(&data, k, None, KMEANS_ITERATIONS, rng);
                normalize_rows(&mut centers);
                let labels: Vec<usize> = (0..data.rows())
                    .map(|i| nearest_by_dot(data.row(i), &centers))
                    .collect();
                let q = modularity(snap, &labels);
                if best.as_ref().is_none_or(|(b, _)| q > *b + MODULARITY_TIE) {
                    best = Some((q, centers));
                }
            }
            let (_, centers) = best.expect("k_max >= 2");
            let centers = match fitted.last() {
                Some(prev) => align_to(&centers, prev),
                None => centers,
            };
            fitted.push(centers);
        }
        self.centroids = fitted;
    }
}

const KMEANS_ITERATIONS: usize = 100;
const MODULARITY_TIE: f64 = 1e-9;

fn nearest_by_dot(row: &[f64], centers: &Matrix) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for c in 0..centers.rows() {
        let s: f64 = row.iter().zip(centers.row(c)).map(|(a, b)| a * b).sum();
        if s > best.1 {
            best = (c, s);
        }
    }
    best.0
}

/// Reorders the rows of `centers` so that each lands on the id of its most
/// similar previous centroid (greedy by similarity); unmatched rows fill
/// the remaining ids in order.
fn align_to(centers: &Matrix, prev: &Matrix) -> Matrix {
    let k = centers.rows();
    let mut pairs = Vec::with_capacity(k * prev.rows());
    for a in 0..k {
        for b in 0..prev.rows().min(k) {
            let s: f64 = centers
                .row(a)
                .iter()
                .zip(prev.row(b))
                .map(|(x, y)| x * y)
                .sum();
            pairs.push((s, a, b));
        }
    }
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut slot_of = vec![None; k];
    let mut taken = vec![false; k];
    for (_, a, b) in pairs {
        if slot_of[a].is_none() && !taken[b] {
            slot_of[a] = Some(b);
            taken[b] = true;
        }
    }
    let mut free = (0..k).filter(|&b| !taken[b]);
    let mut out = Matrix::zeros(k, centers.cols());
    for (a, slot) in slot_of.iter().enumerate() {
        let slot = slot.unwrap_or_else(|| free.next().expect("one free id per unmatched row"));
        out.row_mut(slot).copy_from_slice(centers.row(a));
    }
    out
}

fn normalize_rows(m: &mut Matrix) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
}

/// Rows of the previous state for persisting nodes, zeros for new ones.
pub fn carried_state(prev: Option<&Matrix>, snap: &PreparedSnapshot, d: usize) -> Matrix {
    let mut s = Matrix::zeros(snap.prev_index.len(), d);
    if let Some(prev) = prev {
        for (i, j) in snap.prev_index.iter().enumerate() {
            if let Some(j) = j {
                s.row_mut(i).copy_from_slice(prev.row(*j));
            }
        }
    }
    s
}

/// Carried state on the tape, so gradients reach earlier snapshots.
pub fn carried_state_var(
    tape: &mut Tape,
    prev: Option<Var>,
    snap: &PreparedSnapshot,
    d: usize,
) -> Result<Var, PipelineError> {
    let Some(prev) = prev else {
        return Ok(tape.constant(Matrix::zeros(snap.prev_index.len(), d)));
    };
    let n_prev = tape.shape(prev)[0];
    let zero = tape.constant(Matrix::zeros(1, d));
    let padded = tape.concat_rows(&[prev, zero])?;
    let index: Arc<[usize]> = snap
        .prev_index
        .iter()
        .map(|j| j.unwrap_or(n_prev))
        .collect();
    Ok(tape.gather_rows(padded, index)?)
}

#[derive(Clone, Copy, Debug)]
pub struct SnapshotOutputs {
    pub state: Var,
    pub z_comm: Var,
    pub pi: Var,
    pub c: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotValues {
    pub state: Matrix,
    pub z_comm: Matrix,
    pub pi: Matrix,
    pub c: Matrix,
}

/// Inputs and indices of one snapshot that do not change during training.
#[derive(Clone, Debug)]
pub struct PreparedSnapshot {
    pub x: Matrix,
    pub attention: AttentionIndex,
    pub edges: EdgeIndex,
    /// `(row at t, row at t - 1)` for persisting nodes.
    pub pairs: Vec<(usize, usize)>,
    pub deltas: Vec<f64>,
    /// Row of each node in the previous snapshot.
    pub prev_index: Vec<Option<usize>>,
}

#[derive(Clone, Debug)]
pub struct PreparedGraph {
    pub snapshots: Vec<PreparedSnapshot>,
}

impl PreparedGraph {
    pub fn new(graph: &DynamicGraph, d_in: usize, seed: u64) -> Result<Self, PipelineError> {
        let mut snapshots = Vec::with_capacity(graph.len());
        for (t, snap) in graph.snapshots().iter().enumerate() {
            let (pairs, deltas, prev_index) = if t == 0 {
                (Vec::new(), Vec::new(), vec![None; snap.node_count()])
            } else {
                let ctx = TemporalContext::between(graph, t, Matrix::zeros(0, 0))?;
                let prev = graph.snapshot(t - 1)?;
                let prev_index = snap.ids().iter().map(|id| prev.index_of(id)).collect();
                (ctx.pairs, ctx.deltas, prev_index)
            };
            snapshots.push(PreparedSnapshot {
                x: node_features(graph, t, d_in, seed)?,
                attention: AttentionIndex::new(snap),
                edges: EdgeIndex::new(snap),
                pairs,
                deltas,
                prev_index,
            });
        }
        Ok(Self { snapshots })
    }
}

/// Previous assignments cut or zero-padded to the current community count,
/// so ids shared by both snapshots line up.
fn match_width(c_prev: &Matrix, k: usize) -> Matrix {
    if c_prev.cols() == k {
        return c_prev.clone();
    }
    let mut out = Matrix::zeros(c_prev.rows(), k);
    let w = k.min(c_prev.cols());
    for i in 0..c_prev.rows() {
        out.row_mut(i)[..w].copy_from_slice(&c_prev.row(i)[..w]);
    }
    out
}

/// Extra inputs of the per-snapshot objective.
#[derive(Clone, Copy, Debug, Default)]
pub struct ObjectiveInputs<'a> {
    /// Assignments of the previous snapshot (constant).
    pub c_prev: Option<&'a Matrix>,
    /// Reasoner probabilities (constant) and the consistency weight.
    pub q: Option<(&'a Matrix, f64)>,
    /// Rows for the sampled degree-weighted sum of the modularity term.
    pub degree_sample: Option<&'a [usize]>,
}

#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub modularity: Var,
    pub temporal: Option<Var>,
    pub prototype: Var,
    pub consistency: Option<Var>,
}

/// Modularity (optionally divided by `2|E|`) + λ1·temporal + prototype
/// loss + λ_LLM·consistency for one snapshot.
pub fn snapshot_objective(
    tape: &mut Tape,
    config: &RunConfig,
    snap: &PreparedSnapshot,
    out: &SnapshotOutputs,
    inputs: ObjectiveInputs,
) -> Result<LossParts, PipelineError> {
    let mut modularity = match inputs.degree_sample {
        Some(sample) => {
            modularity_loss_sampled(tape, &snap.edges, out.z_comm, config.similarity, sample)?
        }
        None => modularity_loss(tape, &snap.edges, out.z_comm, config.similarity)?,
    };
    let m = snap.edges.edge_count();
    if config.normalize_modularity && m > 0 {
        modularity = tape.scalar_mul(modularity, 1.0 / (2.0 * m as f64))?;
    }
    let mut total = modularity;
    let mut temporal = None;
    if let Some(c_prev) = inputs.c_prev {
        if !snap.pairs.is_empty() {
            let ctx = TemporalContext {
                c_prev: match_width(c_prev, tape.shape(out.c)[1]),
                pairs: snap.pairs.clone(),
                deltas: snap.deltas.clone(),
            };
            let term = temporal_loss(tape, out.c, &ctx, config.weights.alpha_sens)?;
            let scaled = tape.scalar_mul(term, config.weights.lambda1)?;
            total = tape.add(total, scaled)?;
            temporal = Some(term);
        }
    }
    let proto = prototype_loss(tape, out.pi, config.weights.lambda2, config.diversity_sign)?;
    total = tape.add(total, proto.total)?;
    let mut consistency = None;
    if let Some((q, lambda)) = inputs.q {
        let term = consistency_loss(tape, out.c, q, config.weights.tau_conf)?;
        let scaled = tape.scalar_mul(term, lambda)?;
        total = tape.add(total, scaled)?;
        consistency = Some(term);
    }
    Ok(LossParts {
        total,
        modularity,
        temporal,
        prototype: proto.total,
        consistency,
    })
}

/// Central-difference check of the full per-snapshot objective with
/// respect to every model parameter, at snapshot position `t` with the
/// given carried state and constant inputs.
pub fn check_objective_gradients(
    model: &ModelState,
    snap: &PreparedSnapshot,
    t: usize,
    s_prev: &Matrix,
    inputs: ObjectiveInputs,
    epsilon: f64,
) -> Result<GradientCheck, PipelineError> {
    let params: Vec<Matrix> = model.parameters().into_iter().cloned().collect();
    let layers = model.config.encoder.layers;
    let snapshots = model.centroids.len();
    let failure = std::cell::RefCell::new(None);
    let run = |tape: &mut Tape, vars: &[Var]| -> Result<Var, PipelineError> {
        let vars = ModelVars::from_slice(layers, snapshots, vars)?;
        let s_prev = tape.constant(s_prev.clone());
        let out = model.forward_snapshot(tape, &vars, t, snap, s_prev)?;
        Ok(snapshot_objective(tape, &model.config, snap, &out, inputs)?.total)
    };
    let result = check_gradients(
        |tape, vars| {
            run(tape, vars).map_err(|e| match e {
                PipelineError::Tensor(e) => e,
                other => {
                    *failure.borrow_mut() = Some(other);
                    TensorError::NonFinite(f64::NAN)
                }
            })
        },
        &params,
        epsilon,
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(result?)
}
