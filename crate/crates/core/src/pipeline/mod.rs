//! Training and inference orchestration: run configuration, the Adam
//! optimizer, model state, the epoch loop over snapshots, final
//! assignments with explanations, and evaluation.

mod adam;
mod config;
mod model;
mod train;

pub use adam::Adam;
pub use config::{LambdaMode, ReasonerMode, RunConfig, DEGREE_SAMPLE_MIN_NODES};
pub use model::{
    carried_state, carried_state_var, check_objective_gradients, snapshot_objective, Embedding,
    LossParts, ModelState, ModelVars, ObjectiveInputs, PreparedGraph, PreparedSnapshot,
    SnapshotOutputs, SnapshotValues,
};
pub use train::{
    cluster_report, describe_all, evaluate_run, reason_all, reasoner_for, run_cluster, train,
    train_with, AgreementLog, ClusterOutput, EpochLog, EventRecord, ProvenanceCounts,
    ReasoningRound, RunReport, SnapshotAssignment,
};

use thiserror::Error;

use crate::clustering::ClusterError;
use crate::encoder::EncoderError;
use crate::graph::GraphError;
use crate::metrics::MetricError;
use crate::reasoning::ReasoningError;
use crate::roles::RoleError;
use crate::semantics::SemanticsError;
use crate::tensor::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("configuration line {line}: {message}")]
    ConfigLine { line: usize, message: String },
    #[error("training diverged at epoch {epoch}, snapshot {t}: {detail}")]
    Diverged {
        epoch: usize,
        t: usize,
        detail: String,
    },
    #[error("i/o: {0}")]
    Io(String),
    #[error("json: {0}")]
    Json(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Roles(#[from] RoleError),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
    #[error(transparent)]
    Reasoning(#[from] ReasoningError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
