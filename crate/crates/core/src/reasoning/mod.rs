//! Semantic reasoning over community assignments: prompt construction and
//! reply parsing for a chat-completion backend, an offline deterministic
//! reasoner, agreement between structural and semantic assignments, the
//! consistency loss, blended final labels and per-node explanations.

mod backend;
mod fallback;
mod prompt;

pub use backend::{
    HttpBackend, LlmConfig, LlmReasoner, ReasoningBackend, ENV_KEY, ENV_MODEL, ENV_URL,
};
pub use fallback::{
    deterministic_reason, FallbackConfig, FallbackTerms, PreviousSnapshot, SnapshotEvidence,
};
pub use prompt::{
    build_cot_prompt, parse_reasoning_reply, CommunitySummary, EXPLANATION_STEPS, RENORMALIZE_BAND,
    STEP_COUNT, STEP_GUIDANCE, STEP_TITLES,
};

use std::fmt::{self, Write as _};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::roles::RoleError;
use crate::tensor::{argmax, Matrix, Tape, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReasoningError {
    /// The backend reply violates the reply contract at `field`.
    #[error("reply field `{field}`: {detail}")]
    Reply { field: &'static str, detail: String },
    #[error("{op}: shape {left:?} does not match {right:?}")]
    Shape {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },
    #[error("blend weight must lie in [0, 1], got {0}")]
    Alpha(f64),
    #[error("backend: {0}")]
    Backend(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Roles(#[from] RoleError),
}

impl ReasoningError {
    pub(crate) fn reply(field: &'static str, detail: impl Into<String>) -> Self {
        ReasoningError::Reply {
            field,
            detail: detail.into(),
        }
    }

    /// The violated reply field, if this is a parse error.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            ReasoningError::Reply { field, .. } => Some(field),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Llm,
    Fallback,
    Cached,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Llm => "llm",
            Provenance::Fallback => "fallback",
            Provenance::Cached => "cached",
        })
    }
}

/// One node's semantic assignment distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasoningResult {
    /// Row-stochastic probabilities over the K communities.
    pub q: Vec<f64>,
    pub steps: Vec<String>,
    pub confidence: f64,
    pub provenance: Provenance,
}

/// Stacks per-node results into a `|V| x K` matrix.
pub fn q_matrix(results: &[ReasoningResult], k: usize) -> Result<Matrix, ReasoningError> {
    let mut data = Vec::with_capacity(results.len() * k);
    for r in results {
        if r.q.len() != k {
            return Err(ReasoningError::Shape {
                op: "q_matrix",
                left: [1, r.q.len()],
                right: [1, k],
            });
        }
        data.extend_from_slice(&r.q);
    }
    Ok(Matrix::from_vec(results.len(), k, data)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub agreement: f64,
    pub flags: Vec<bool>,
    pub lambda_llm: f64,
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<(), ReasoningError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(ReasoningError::Shape {
            op,
            left: a.shape(),
            right: b.shape(),
        })
    }
}

/// Fraction of rows whose structural and semantic argmax coincide, and
/// the resulting consistency weight `max(0, 1 - A)`.
pub fn agreement(c: &Matrix, q: &Matrix) -> Result<AgreementReport, ReasoningError> {
    same_shape("agreement", c, q)?;
    let flags: Vec<bool> = (0..c.rows())
        .map(|i| c.row_argmax(i) == q.row_argmax(i))
        .collect();
    let agreement = if flags.is_empty() {
        1.0
    } else {
        flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64
    };
    Ok(AgreementReport {
        agreement,
        flags,
        lambda_llm: (1.0 - agreement).max(0.0),
    })
}

/// Cross-entropy of `c` against the confident rows of the constant `q`
/// (rows whose maximum exceeds `tau_conf`). Zero when no row qualifies.
pub fn consistency_loss(
    tape: &mut Tape,
    c: Var,
    q: &Matrix,
    tau_conf: f64,
) -> Result<Var, ReasoningError> {
    let shape = tape.shape(c);
    if shape != q.shape() {
        return Err(ReasoningError::Shape {
            op: "consistency_loss",
            left: shape,
            right: q.shape(),
        });
    }
    let confident: Vec<usize> = (0..q.rows())
        .filter(|&i| q.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max) > tau_conf)
        .collect();
    if confident.is_empty() {
        return Ok(tape.constant(Matrix::scalar(0.0)));
    }
    let mut q_conf = Matrix::zeros(confident.len(), q.cols());
    for (r, &i) in confident.iter().enumerate() {
        q_conf.row_mut(r).copy_from_slice(q.row(i));
    }
    let n = confident.len() as f64;
    let rows = tape.gather_rows(c, Arc::from(confident))?;
    let log_c = tape.log(rows)?;
    let target = tape.constant(q_conf);
    let weighted = tape.hadamard(log_c, target)?;
    let total = tape.sum_all(weighted)?;
    Ok(tape.scalar_mul(total, -1.0 / n)?)
}

/// `argmax_k [alpha * C_ik + (1 - alpha) * Q_ik]`, lowest index on ties.
pub fn final_assignment(c: &Matrix, q: &Matrix, alpha: f64) -> Result<Vec<usize>, ReasoningError> {
    same_shape("final_assignment", c, q)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ReasoningError::Alpha(alpha));
    }
    Ok((0..c.rows())
        .map(|i| argmax(&blend(c.row(i), q.row(i), alpha)))
        .collect())
}

fn blend(c: &[f64], q: &[f64], alpha: f64) -> Vec<f64> {
    c.iter()
        .zip(q)
        .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationStep {
    pub name: String,
    pub text: String,
}

/// Per-node assignment explanation following the five reasoning steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub node: String,
    pub t: usize,
    pub community: usize,
    pub blended: Vec<f64>,
    pub steps: Vec<ExplanationStep>,
    pub structural_confidence: f64,
    pub semantic_confidence: f64,
    pub final_confidence: f64,
    pub provenance: Provenance,
}

impl ExplanationReport {
    pub fn text(&self) -> String {
        let mut out = format!(
            "Assignment decision: node {} -> community C{} (snapshot {})\n",
            self.node, self.community, self.t
        );
        for (i, step) in self.steps.iter().enumerate() {
            let _ = writeln!(out, "Step {} - {}: {}", i + 1, step.name, step.text);
        }
        let _ = writeln!(
            out,
            "Final confidence: {:.3} (structural {:.3}, semantic {:.3}; reasoner: {})",
            self.final_confidence,
            self.structural_confidence,
            self.semantic_confidence,
            self.provenance
        );
        out
    }
}

/// Builds the explanation for one node from its structural row, its
/// reasoning result and the blend weight.
pub fn render_explanation(
    node: &str,
    t: usize,
    c_row: &[f64],
    result: &ReasoningResult,
    alpha: f64,
) -> Result<ExplanationReport, ReasoningError> {
    if c_row.len() != result.q.len() {
        return Err(ReasoningError::Shape {
            op: "render_explanation",
            left: [1, c_row.len()],
            right: [1, result.q.len()],
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ReasoningError::Alpha(alpha));
    }
    let blended = blend(c_row, &result.q, alpha);
    let structural = c_row.iter().cloned().fold(0.0, f64::max);
    let semantic = result.q.iter().cloned().fold(0.0, f64::max);
    let steps = EXPLANATION_STEPS
        .iter()
        .zip(&result.steps)
        .map(|(name, text)| ExplanationStep {
            name: name.to_string(),
            text: text.clone(),
        })
        .collect();
    Ok(ExplanationReport {
        node: node.to_string(),
        t,
        community: argmax(&blended),
        blended,
        steps,
        structural_confidence: structural,
        semantic_confidence: semantic,
        final_confidence: alpha * structural + (1.0 - alpha) * semantic,
        provenance: result.provenance,
    })
}
