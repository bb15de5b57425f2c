use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::Snapshot;
use crate::tensor::{Matrix, Tape, TensorError, Var};

use super::glorot;

/// Target/source pairs for attention over `N(i) ∪ {i}`.
///
/// Entry `e` aggregates node `src[e]` into node `tgt[e]`. Each target's
/// self-pair comes first, followed by its neighbors in index order.
#[derive(Clone, Debug)]
pub struct AttentionIndex {
    pub nodes: usize,
    pub tgt: Arc<[usize]>,
    pub src: Arc<[usize]>,
}

impl AttentionIndex {
    pub fn new(snapshot: &Snapshot) -> Self {
        let n = snapshot.node_count();
        let mut tgt = Vec::with_capacity(n + 2 * snapshot.edge_count());
        let mut src = Vec::with_capacity(tgt.capacity());
        for i in 0..n {
            tgt.push(i);
            src.push(i);
            for &j in snapshot.neighbors(i) {
                tgt.push(i);
                src.push(j);
            }
        }
        Self {
            nodes: n,
            tgt: tgt.into(),
            src: src.into(),
        }
    }
}

/// Single-head graph attention layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatLayer {
    /// `d_out x d_in`.
    pub w: Matrix,
    /// `2·d_out x 1`: target half first, then source half.
    pub a: Matrix,
    pub slope: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct GatVars {
    pub w: Var,
    pub a: Var,
}

pub struct GatOutput {
    pub h: Var,
    /// Attention coefficients aligned with [`AttentionIndex`] entries (`E x 1`).
    pub alpha: Var,
}

impl GatLayer {
    pub fn new<R: Rng>(d_in: usize, d_out: usize, slope: f64, rng: &mut R) -> Self {
        Self {
            w: glorot(d_out, d_in, rng),
            a: glorot(2 * d_out, 1, rng),
            slope,
        }
    }

    pub fn d_in(&self) -> usize {
        self.w.cols()
    }

    pub fn d_out(&self) -> usize {
        self.w.rows()
    }

    pub fn bind(&self, tape: &mut Tape) -> GatVars {
        GatVars {
            w: tape.param(self.w.clone()),
            a: tape.param(self.a.clone()),
        }
    }
}

/// `h_i' = ReLU(Σ_{j ∈ N(i) ∪ {i}} α_ij · W h_j)` with
/// `α_ij = softmax_j LeakyReLU(aᵀ [W h_i ‖ W h_j])`.
pub fn gat_forward(
    tape: &mut Tape,
    vars: GatVars,
    slope: f64,
    index: &AttentionIndex,
    h: Var,
) -> Result<GatOutput, TensorError> {
    let [rows, _] = tape.shape(h);
    if rows != index.nodes {
        return Err(TensorError::ShapeMismatch {
            op: "gat_forward",
            left: [rows, tape.shape(h)[1]],
            right: [index.nodes, 0],
        });
    }
    let d_out = tape.shape(vars.w)[0];
    let wt = tape.transpose(vars.w)?;
    let hw = tape.matmul(h, wt)?;
    let a_tgt = tape.slice_rows(vars.a, 0, d_out)?;
    let a_src = tape.slice_rows(vars.a, d_out, 2 * d_out)?;
    let score_tgt = tape.matmul(hw, a_tgt)?;
    let score_src = tape.matmul(hw, a_src)?;
    let e_tgt = tape.gather_rows(score_tgt, index.tgt.clone())?;
    let e_src = tape.gather_rows(score_src, index.src.clone())?;
    let logits = tape.add(e_tgt, e_src)?;
    let logits = tape.leaky_relu(logits, slope)?;
    let alpha = tape.segment_softmax(logits, index.tgt.clone())?;
    let messages = tape.gather_rows(hw, index.src.clone())?;
    let weighted = tape.mul_col_broadcast(messages, alpha)?;
    let summed = tape.scatter_add_rows(weighted, index.tgt.clone(), index.nodes)?;
    let out = tape.relu(summed)?;
    Ok(GatOutput { h: out, alpha })
}
