use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Matrix, Tape, TensorError, Var};

use super::glorot;

/// Gated recurrent unit over row-batched node states.
///
/// `z = σ(x W_zᵀ + s U_zᵀ + b_z)`, `r = σ(x W_rᵀ + s U_rᵀ + b_r)`,
/// `n = tanh(x W_nᵀ + (r ⊙ s) U_nᵀ + b_n)`, `s' = s + z ⊙ (n − s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub w_z: Matrix,
    pub u_z: Matrix,
    pub b_z: Matrix,
    pub w_r: Matrix,
    pub u_r: Matrix,
    pub b_r: Matrix,
    pub w_n: Matrix,
    pub u_n: Matrix,
    pub b_n: Matrix,
}

#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_n: Var,
    pub u_n: Var,
    pub b_n: Var,
}

impl GruVars {
    pub fn all(&self) -> [Var; 9] {
        [
            self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r, self.w_n, self.u_n,
            self.b_n,
        ]
    }
}

impl GruCell {
    /// `d_in` input width, `d` state width; biases start at zero.
    pub fn new<R: Rng>(d_in: usize, d: usize, rng: &mut R) -> Self {
        Self {
            w_z: glorot(d, d_in, rng),
            u_z: glorot(d, d, rng),
            b_z: Matrix::zeros(1, d),
            w_r: glorot(d, d_in, rng),
            u_r: glorot(d, d, rng),
            b_r: Matrix::zeros(1, d),
            w_n: glorot(d, d_in, rng),
            u_n: glorot(d, d, rng),
            b_n: Matrix::zeros(1, d),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.u_z.rows()
    }

    pub fn parameters(&self) -> [&Matrix; 9] {
        [
            &self.w_z, &self.u_z, &self.b_z, &self.w_r, &self.u_r, &self.b_r, &self.w_n, &self.u_n,
            &self.b_n,
        ]
    }

    pub fn parameters_mut(&mut self) -> [&mut Matrix; 9] {
        [
            &mut self.w_z,
            &mut self.u_z,
            &mut self.b_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_n,
            &mut self.u_n,
            &mut self.b_n,
        ]
    }

    pub fn bind(&self, tape: &mut Tape) -> GruVars {
        let [w_z, u_z, b_z, w_r, u_r, b_r, w_n, u_n, b_n] =
            self.parameters().map(|m| tape.param(m.clone()));
        GruVars {
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_n,
            u_n,
            b_n,
        }
    }
}

fn affine(tape: &mut Tape, x: Var, w: Var, s: Var, u: Var, b: Var) -> Result<Var, TensorError> {
    let wt = tape.transpose(w)?;
    let xw = tape.matmul(x, wt)?;
    let ut = tape.transpose(u)?;
    let su = tape.matmul(s, ut)?;
    let sum = tape.add(xw, su)?;
    tape.add_row_broadcast(sum, b)
}

/// One recurrent update for all rows at once.
pub fn gru_step(tape: &mut Tape, vars: &GruVars, h: Var, s_prev: Var) -> Result<Var, TensorError> {
    let z = affine(tape, h, vars.w_z, s_prev, vars.u_z, vars.b_z)?;
    let z = tape.sigmoid(z)?;
    let r = affine(tape, h, vars.w_r, s_prev, vars.u_r, vars.b_r)?;
    let r = tape.sigmoid(r)?;
    let rs = tape.hadamard(r, s_prev)?;
    let n = affine(tape, h, vars.w_n, rs, vars.u_n, vars.b_n)?;
    let n = tape.tanh(n)?;
    let diff = tape.sub(n, s_prev)?;
    let step = tape.hadamard(z, diff)?;
    tape.add(s_prev, step)
}
