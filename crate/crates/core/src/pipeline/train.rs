use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::DEGREE_SAMPLE_MIN_NODES;
use super::model::{
    carried_state, carried_state_var, snapshot_objective, LossParts, ModelState, ObjectiveInputs,
    PreparedGraph, SnapshotValues,
};
use super::{LambdaMode, PipelineError, ReasonerMode, RunConfig};
use crate::graph::DynamicGraph;
use crate::metrics::{efs, evaluate_partitions, rcs, ClaimVerifier, MetricReport};
use crate::reasoning::{
    agreement, build_cot_prompt, deterministic_reason, final_assignment, q_matrix,
    render_explanation, ExplanationReport, HttpBackend, LlmReasoner, PreviousSnapshot, Provenance,
    ReasoningResult, SnapshotEvidence,
};
use crate::roles::{dominant_role, track_events, EventLabel, PartitionView, Role};
use crate::semantics::{DescriptionContext, SemanticDescription, TemplateConfig};
use crate::tensor::{Matrix, Tape, Var};

const CENTROID_SEED_SALT: u64 = 0xc3e7_701d;
const CLUSTER_SEED_SALT: u64 = 0xc105_7e12;

/// Mean loss components over the snapshots of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub modularity: f64,
    pub temporal: f64,
    pub prototype: f64,
    pub consistency: f64,
    pub total: f64,
    pub learning_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementLog {
    pub epoch: usize,
    pub t: usize,
    pub agreement: f64,
    pub lambda_llm: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceCounts {
    pub llm: usize,
    pub fallback: usize,
    pub cached: usize,
}

impl ProvenanceCounts {
    fn add(&mut self, results: &[ReasoningResult]) {
        for r in results {
            match r.provenance {
                Provenance::Llm => self.llm += 1,
                Provenance::Fallback => self.fallback += 1,
                Provenance::Cached => self.cached += 1,
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub community_t: Option<usize>,
    pub community_t1: Option<usize>,
    pub label: EventLabel,
    pub size_t: usize,
    pub size_t1: usize,
}

/// Final output for one snapshot; vectors follow the snapshot's node order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotAssignment {
    pub t: usize,
    pub nodes: Vec<String>,
    pub labels: Vec<usize>,
    pub structural_labels: Vec<usize>,
    pub roles: Vec<Role>,
    /// Role affinities, `|V| x 5`.
    pub affinities: Matrix,
    /// Events from the previous snapshot into this one.
    pub events: Vec<EventRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config: RunConfig,
    pub epochs: Vec<EpochLog>,
    pub agreement: Vec<AgreementLog>,
    pub provenance: ProvenanceCounts,
    pub snapshots: Vec<SnapshotAssignment>,
    pub explanations: Vec<ExplanationReport>,
    pub metrics: MetricReport,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String, PipelineError> {
        serde_json::to_string_pretty(self).map_err(|e| PipelineError::Json(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Json(e.to_string()))
    }

    pub fn labels(&self) -> Vec<Vec<usize>> {
        self.snapshots.iter().map(|s| s.labels.clone()).collect()
    }

    /// Explanation of `node` at snapshot `t` (the last snapshot containing
    /// the node when `t` is `None`).
    pub fn explanation(&self, node: &str, t: Option<usize>) -> Option<&ExplanationReport> {
        self.explanations
            .iter()
            .filter(|e| e.node == node && t.is_none_or(|t| e.t == t))
            .max_by_key(|e| e.t)
    }
}

/// Reasoner outputs for every snapshot of one round.
#[derive(Clone, Debug)]
pub struct ReasoningRound {
    pub q: Vec<Matrix>,
    pub results: Vec<Vec<ReasoningResult>>,
}

fn structural_labels(c: &Matrix) -> Vec<usize> {
    (0..c.rows()).map(|i| c.row_argmax(i)).collect()
}

/// Builds the backend named by the config, if it needs one.
pub fn reasoner_for(config: &RunConfig) -> Result<Option<LlmReasoner>, PipelineError> {
    match config.reasoner {
        ReasonerMode::Llm => {
            let backend = HttpBackend::from_env(Duration::from_secs(config.llm.timeout_secs))?;
            Ok(Some(LlmReasoner::new(
                Box::new(backend),
                config.llm.clone(),
            )?))
        }
        _ => Ok(None),
    }
}

/// Runs the reasoner over every node of every snapshot, using the
/// structural argmax as the current partition.
pub fn reason_all(
    graph: &DynamicGraph,
    config: &RunConfig,
    values: &[SnapshotValues],
    llm: Option<&LlmReasoner>,
) -> Result<ReasoningRound, PipelineError> {
    let labels: Vec<Vec<usize>> = values.iter().map(|v| structural_labels(&v.c)).collect();
    let mut round = ReasoningRound {
        q: Vec::with_capacity(values.len()),
        results: Vec::with_capacity(values.len()),
    };
    for (t, snap) in graph.snapshots().iter().enumerate() {
        let previous = (t > 0).then(|| PreviousSnapshot {
            snapshot: &graph.snapshots()[t - 1],
            labels: &labels[t - 1],
            pi: &values[t - 1].pi,
        });
        let k = values[t].c.cols();
        let evidence = SnapshotEvidence::new(snap, &labels[t], &values[t].pi, k, previous)?;
        let fallback: Vec<ReasoningResult> = (0..snap.node_count())
            .into_par_iter()
            .map(|i| deterministic_reason(&evidence, i, &config.fallback))
            .collect();
        let results = match llm {
            Some(reasoner) => {
                let ctx = DescriptionContext::new(
                    graph,
                    t,
                    &labels[t],
                    &values[t].pi,
                    (t > 0).then(|| (labels[t - 1].as_slice(), &values[t - 1].pi)),
                    &config.events,
                    TemplateConfig {
                        theta: config.theta,
                    },
                )?;
                let summaries = evidence.summaries(ctx.events());
                let prompts: Vec<String> = snap
                    .ids()
                    .par_iter()
                    .map(|id| ctx.render(id).map(|d| build_cot_prompt(&d, &summaries)))
                    .collect::<Result<_, _>>()?;
                reasoner.reason(prompts.into_iter().zip(fallback).collect())
            }
            None => fallback,
        };
        round.q.push(q_matrix(&results, k)?);
        round.results.push(results);
    }
    Ok(round)
}

struct EpochAccumulator {
    sums: [f64; 5],
    counts: [usize; 5],
}

impl EpochAccumulator {
    fn new() -> Self {
        Self {
            sums: [0.0; 5],
            counts: [0; 5],
        }
    }

    fn add(&mut self, tape: &Tape, parts: &LossParts) {
        let mut put = |slot: usize, v: Option<Var>| {
            if let Some(v) = v {
                self.sums[slot] += tape.value(v).item();
                self.counts[slot] += 1;
            }
        };
        put(0, Some(parts.modularity));
        put(1, parts.temporal);
        put(2, Some(parts.prototype));
        put(3, parts.consistency);
        put(4, Some(parts.total));
    }

    fn finish(&self, epoch: usize, lr: f64) -> EpochLog {
        let mean = |i: usize| {
            if self.counts[i] == 0 {
                0.0
            } else {
                self.sums[i] / self.counts[i] as f64
            }
        };
        EpochLog {
            epoch,
            modularity: mean(0),
            temporal: mean(1),
            prototype: mean(2),
            consistency: mean(3),
            total: mean(4),
            learning_rate: lr,
        }
    }
}

struct Trainer<'a> {
    config: &'a RunConfig,
    prepared: PreparedGraph,
    model: ModelState,
    adam: Adam,
    rng: ChaCha8Rng,
    halved: bool,
    warnings: Vec<String>,
}

impl Trainer<'_> {
    fn refit(&mut self, graph: &DynamicGraph, rng: &mut ChaCha8Rng) -> Result<(), PipelineError> {
        let embeddings = self.model.embed(&self.prepared)?;
        self.model.fit_centroids(graph, &embeddings, rng);
        let offset = self.model.centroid_offset();
        for (t, c) in self.model.centroids.iter().enumerate() {
            self.adam.reset_slot(offset + t, c.shape());
        }
        Ok(())
    }

    fn apply(&mut self, tape: &Tape, vars: &[Var], loss: Var) -> Result<(), PipelineError> {
        let grads = tape.backward(loss)?;
        let grad_refs: Vec<Option<&Matrix>> = vars.iter().map(|v| grads.get(*v)).collect();
        self.adam.step(self.model.parameters_mut(), &grad_refs);
        let warnings = self
            .model
            .encoder
            .decomposer
            .reorthonormalize(&mut self.rng);
        for w in warnings {
            log::warn!("{w}");
            self.warnings.push(w);
        }
        Ok(())
    }

    /// `Ok(false)` means the step was skipped after halving the rate.
    fn guard(
        &mut self,
        tape: &Tape,
        parts: &LossParts,
        epoch: usize,
        t: usize,
    ) -> Result<bool, PipelineError> {
        let value = tape.value(parts.total).item();
        if value.is_finite() {
            return Ok(true);
        }
        let detail = format!(
            "total {value}, modularity {}, prototype {}, learning rate {}",
            tape.value(parts.modularity).item(),
            tape.value(parts.prototype).item(),
            self.adam.lr
        );
        if self.halved {
            return Err(PipelineError::Diverged { epoch, t, detail });
        }
        self.halved = true;
        self.adam.lr /= 2.0;
        let msg = format!(
            "non-finite loss at epoch {epoch}, snapshot {t} ({detail}); learning rate halved"
        );
        log::warn!("{msg}");
        self.warnings.push(msg);
        Ok(false)
    }

    /// Uniform row sample for the degree term of snapshot `t`, when the
    /// snapshot is large enough and sampling is configured.
    fn degree_sample(&mut self, t: usize) -> Option<Vec<usize>> {
        let b = self.config.degree_sample?;
        let n = self.prepared.snapshots[t].x.rows();
        (n > DEGREE_SAMPLE_MIN_NODES && b < n)
            .then(|| (0..b).map(|_| self.rng.random_range(0..n)).collect())
    }

    fn epoch_truncated(
        &mut self,
        epoch: usize,
        q: Option<&(Vec<Matrix>, Vec<f64>)>,
    ) -> Result<EpochLog, PipelineError> {
        let mut acc = EpochAccumulator::new();
        let mut prev_state: Option<Matrix> = None;
        let mut prev_c: Option<Matrix> = None;
        for t in 0..self.prepared.snapshots.len() {
            let mut last = None;
            for step in 0..self.config.steps_per_snapshot {
                let sample = self.degree_sample(t);
                let snap = &self.prepared.snapshots[t];
                let mut tape = Tape::new();
                let vars = self.model.bind(&mut tape);
                let s_prev = carried_state(prev_state.as_ref(), snap, self.config.encoder.d);
                let s_prev = tape.constant(s_prev);
                let out = self
                    .model
                    .forward_snapshot(&mut tape, &vars, t, snap, s_prev)?;
                let inputs = ObjectiveInputs {
                    c_prev: prev_c.as_ref(),
                    q: q.map(|(qs, lambdas)| (&qs[t], lambdas[t])),
                    degree_sample: sample.as_deref(),
                };
                let parts = snapshot_objective(&mut tape, self.config, snap, &out, inputs)?;
                if step == 0 {
                    acc.add(&tape, &parts);
                }
                last = Some((tape.value(out.state).clone(), tape.value(out.c).clone()));
                if self.guard(&tape, &parts, epoch, t)? {
                    self.apply(&tape, &vars.all(), parts.total)?;
                }
            }
            let (state, c) = last.expect("at least one step per snapshot");
            prev_state = Some(state);
            prev_c = Some(c);
        }
        Ok(acc.finish(epoch, self.adam.lr))
    }

    fn epoch_bptt(
        &mut self,
        epoch: usize,
        q: Option<&(Vec<Matrix>, Vec<f64>)>,
    ) -> Result<EpochLog, PipelineError> {
        let mut acc = EpochAccumulator::new();
        let mut tape = Tape::new();
        let vars = self.model.bind(&mut tape);
        let mut prev_state: Option<Var> = None;
        let mut prev_c: Option<Matrix> = None;
        let mut total: Option<Var> = None;
        for t in 0..self.prepared.snapshots.len() {
            let sample = self.degree_sample(t);
            let snap = &self.prepared.snapshots[t];
            let s_prev = carried_state_var(&mut tape, prev_state, snap, self.config.encoder.d)?;
            let out = self
                .model
                .forward_snapshot(&mut tape, &vars, t, snap, s_prev)?;
            let inputs = ObjectiveInputs {
                c_prev: prev_c.as_ref(),
                q: q.map(|(qs, lambdas)| (&qs[t], lambdas[t])),
                degree_sample: sample.as_deref(),
            };
            let parts = snapshot_objective(&mut tape, self.config, snap, &out, inputs)?;
            acc.add(&tape, &parts);
            if !self.guard(&tape, &parts, epoch, t)? {
                return Ok(acc.finish(epoch, self.adam.lr));
            }
            total = Some(match total {
                Some(sum) => tape.add(sum, parts.total)?,
                None => parts.total,
            });
            prev_state = Some(out.state);
            prev_c = Some(tape.value(out.c).clone());
        }
        if let Some(loss) = total {
            self.apply(&tape, &vars.all(), loss)?;
        }
        Ok(acc.finish(epoch, self.adam.lr))
    }
}

/// Trains with the backend named by the config.
pub fn train(
    config: &RunConfig,
    graph: &DynamicGraph,
) -> Result<(ModelState, RunReport), PipelineError> {
    let llm = reasoner_for(config)?;
    train_with(config, graph, llm.as_ref())
}

/// Trains with an explicit backend (`None` uses the deterministic reasoner
/// whenever reasoning is enabled).
pub fn train_with(
    config: &RunConfig,
    graph: &DynamicGraph,
    llm: Option<&LlmReasoner>,
) -> Result<(ModelState, RunReport), PipelineError> {
    config.validate()?;
    if graph.is_empty() {
        return Err(PipelineError::Config("graph has no snapshots".into()));
    }
    let prepared = PreparedGraph::new(graph, config.encoder.d_in, config.seed)?;
    let mut model = ModelState::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ CENTROID_SEED_SALT);
    let embeddings = model.embed(&prepared)?;
    model.fit_centroids(graph, &embeddings, &mut rng);
    let shapes: Vec<[usize; 2]> = model.parameters().iter().map(|m| m.shape()).collect();
    let mut trainer = Trainer {
        config,
        prepared,
        model,
        adam: Adam::new(config.learning_rate, &shapes),
        rng: rng.clone(),
        halved: false,
        warnings: Vec::new(),
    };

    let mut epochs = Vec::with_capacity(config.epochs);
    let mut agreement_log = Vec::new();
    let mut provenance = ProvenanceCounts::default();
    let mut cached_q: Option<(Vec<Matrix>, Vec<f64>)> = None;
    for epoch in 0..config.epochs {
        let cadence = epoch >= config.warmup_epochs
            && ((epoch + 1) % config.reasoning_every == 0 || epoch + 1 == config.epochs);
        if cadence || (epoch == config.warmup_epochs && epoch > 0) {
            trainer.refit(graph, &mut rng)?;
        }
        if cadence && config.reasoner != ReasonerMode::Off {
            let values = trainer.model.infer(&trainer.prepared)?;
            let round = reason_all(graph, config, &values, llm)?;
            let mut lambdas = Vec::with_capacity(values.len());
            for (t, (v, q)) in values.iter().zip(&round.q).enumerate() {
                let report = agreement(&v.c, q)?;
                let lambda = match config.lambda_llm {
                    LambdaMode::Adaptive => report.lambda_llm,
                    LambdaMode::Fixed(l) => l,
                };
                agreement_log.push(AgreementLog {
                    epoch,
                    t,
                    agreement: report.agreement,
                    lambda_llm: report.lambda_llm,
                });
                lambdas.push(lambda);
            }
            for r in &round.results {
                provenance.add(r);
            }
            cached_q = Some((round.q, lambdas));
        }
        let log = if config.bptt {
            trainer.epoch_bptt(epoch, cached_q.as_ref())?
        } else {
            trainer.epoch_truncated(epoch, cached_q.as_ref())?
        };
        log::debug!(
            "epoch {epoch}: total {:.5} modularity {:.5} temporal {:.5} prototype {:.5} consistency {:.5}",
            log.total,
            log.modularity,
            log.temporal,
            log.prototype,
            log.consistency
        );
        epochs.push(log);
    }

    let Trainer {
        mut model,
        warnings,
        ..
    } = trainer;
    let output = run_cluster(&model, graph, llm)?;
    model.centroids = output.centroids.clone();
    provenance.llm += output.provenance.llm;
    provenance.fallback += output.provenance.fallback;
    provenance.cached += output.provenance.cached;
    let metrics = evaluate_run(graph, &output.snapshots, config)?;
    let mut all_warnings = warnings;
    all_warnings.extend(output.warnings);
    let report = RunReport {
        seed: config.seed,
        config: config.clone(),
        epochs,
        agreement: agreement_log,
        provenance,
        snapshots: output.snapshots,
        explanations: output.explanations,
        metrics,
        warnings: all_warnings,
    };
    Ok((model, report))
}

/// Inference output of a trained model.
#[derive(Clone, Debug)]
pub struct ClusterOutput {
    pub snapshots: Vec<SnapshotAssignment>,
    pub explanations: Vec<ExplanationReport>,
    pub assignments: Vec<Matrix>,
    /// Centroids fitted to the clustered graph.
    pub centroids: Vec<Matrix>,
    pub provenance: ProvenanceCounts,
    pub warnings: Vec<String>,
}

/// Fits centroids to `graph`, then produces final labels (blend of
/// structural and reasoner assignments), one explanation per node per
/// snapshot, and community events.
pub fn run_cluster(
    model: &ModelState,
    graph: &DynamicGraph,
    llm: Option<&LlmReasoner>,
) -> Result<ClusterOutput, PipelineError> {
    let config = &model.config;
    let prepared = PreparedGraph::new(graph, config.encoder.d_in, config.seed)?;
    let mut fitted = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ CLUSTER_SEED_SALT);
    let embeddings = fitted.embed(&prepared)?;
    fitted.fit_centroids(graph, &embeddings, &mut rng);
    let values = fitted.infer(&prepared)?;
    let round = reason_all(graph, config, &values, llm)?;
    let alpha = match config.reasoner {
        ReasonerMode::Off => 1.0,
        _ => config.weights.alpha_blend,
    };
    let mut provenance = ProvenanceCounts::default();
    let mut snapshots: Vec<SnapshotAssignment> = Vec::with_capacity(graph.len());
    let mut explanations = Vec::new();
    for (t, snap) in graph.snapshots().iter().enumerate() {
        let v = &values[t];
        let labels = final_assignment(&v.c, &round.q[t], alpha)?;
        provenance.add(&round.results[t]);
        for (i, id) in snap.ids().iter().enumerate() {
            explanations.push(render_explanation(
                id,
                t,
                v.c.row(i),
                &round.results[t][i],
                alpha,
            )?);
        }
        let events = match snapshots.last() {
            Some(prev) => track_events(
                &PartitionView {
                    ids: graph.snapshots()[t - 1].ids(),
                    labels: &prev.labels,
                    pi: &prev.affinities,
                },
                &PartitionView {
                    ids: snap.ids(),
                    labels: &labels,
                    pi: &v.pi,
                },
                &config.events,
            )
            .into_iter()
            .map(|e| EventRecord {
                community_t: e.community_t,
                community_t1: e.community_t1,
                label: e.label,
                size_t: e.delta.size_t,
                size_t1: e.delta.size_t1,
            })
            .collect(),
            None => Vec::new(),
        };
        snapshots.push(SnapshotAssignment {
            t,
            nodes: snap.ids().to_vec(),
            structural_labels: structural_labels(&v.c),
            labels,
            roles: (0..v.pi.rows())
                .map(|i| dominant_role(v.pi.row(i)))
                .collect(),
            affinities: v.pi.clone(),
            events,
        });
    }
    Ok(ClusterOutput {
        snapshots,
        explanations,
        assignments: values.into_iter().map(|v| v.c).collect(),
        centroids: fitted.centroids,
        provenance,
        warnings: Vec::new(),
    })
}

/// Clusters `graph` with a trained model and evaluates the result. The
/// report has no epoch or agreement history.
pub fn cluster_report(
    model: &ModelState,
    graph: &DynamicGraph,
    llm: Option<&LlmReasoner>,
) -> Result<RunReport, PipelineError> {
    let output = run_cluster(model, graph, llm)?;
    let metrics = evaluate_run(graph, &output.snapshots, &model.config)?;
    Ok(RunReport {
        seed: model.config.seed,
        config: model.config.clone(),
        epochs: Vec::new(),
        agreement: Vec::new(),
        provenance: output.provenance,
        snapshots: output.snapshots,
        explanations: output.explanations,
        metrics,
        warnings: output.warnings,
    })
}

/// Renders the three-level description of every node of every snapshot.
pub fn describe_all(
    graph: &DynamicGraph,
    snapshots: &[SnapshotAssignment],
    config: &RunConfig,
) -> Result<Vec<SemanticDescription>, PipelineError> {
    let mut out = Vec::new();
    for (t, snap) in graph.snapshots().iter().enumerate() {
        let s = &snapshots[t];
        let previous = (t > 0).then(|| {
            (
                snapshots[t - 1].labels.as_slice(),
                &snapshots[t - 1].affinities,
            )
        });
        let ctx = DescriptionContext::new(
            graph,
            t,
            &s.labels,
            &s.affinities,
            previous,
            &config.events,
            TemplateConfig {
                theta: config.theta,
            },
        )?;
        let rendered: Vec<SemanticDescription> = snap
            .ids()
            .par_iter()
            .map(|id| ctx.render(id))
            .collect::<Result<_, _>>()?;
        out.extend(rendered);
    }
    Ok(out)
}

/// Partition metrics (NMI/NF1 when the graph carries labels), role
/// consistency and explanation fidelity.
pub fn evaluate_run(
    graph: &DynamicGraph,
    snapshots: &[SnapshotAssignment],
    config: &RunConfig,
) -> Result<MetricReport, PipelineError> {
    if snapshots.len() != graph.len() {
        return Err(PipelineError::Config(format!(
            "{} assignments for {} snapshots",
            snapshots.len(),
            graph.len()
        )));
    }
    for (s, snap) in snapshots.iter().zip(graph.snapshots()) {
        if s.nodes != snap.ids() {
            return Err(PipelineError::Config(format!(
                "snapshot {} node list differs from the graph",
                s.t
            )));
        }
    }
    let pred: Vec<Vec<usize>> = snapshots.iter().map(|s| s.labels.clone()).collect();
    let truth: Option<Vec<Vec<usize>>> = graph.has_labels().then(|| {
        graph
            .snapshots()
            .iter()
            .map(|s| s.labels().expect("checked").to_vec())
            .collect()
    });
    let mut report = evaluate_partitions(graph, &pred, truth.as_deref())?;
    let pi: Vec<Matrix> = snapshots.iter().map(|s| s.affinities.clone()).collect();
    if graph.len() >= 2 {
        report.rcs = Some(rcs(graph, &pi)?);
    }
    let descriptions = describe_all(graph, snapshots, config)?;
    let total: usize = descriptions.iter().map(|d| d.claims.len()).sum();
    if total > 0 {
        let verifier = ClaimVerifier::new(graph, &pred, &pi, config.events.clone())?;
        let n = config.efs_samples.unwrap_or(total);
        report.efs = Some(efs(&descriptions, &verifier, n, config.seed)?);
    }
    Ok(report)
}
