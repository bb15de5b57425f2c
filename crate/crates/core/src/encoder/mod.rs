//! Snapshot encoder: stacked graph attention, a recurrent state carried
//! across snapshots, and an exactly orthogonal split of that state into a
//! role part and a community part.

mod decompose;
mod features;
mod gat;
mod gru;

pub use decompose::{decompose, OrthogonalDecomposer};
pub use features::{node_features, STRUCTURAL_FEATURES};
pub use gat::{gat_forward, AttentionIndex, GatLayer, GatOutput, GatVars};
pub use gru::{gru_step, GruCell, GruVars};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::GraphError;
use crate::tensor::{Matrix, Tape, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid encoder configuration: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub d_in: usize,
    pub d: usize,
    pub d_r: usize,
    pub d_c: usize,
    pub slope: f64,
}

impl EncoderConfig {
    /// Sizes reported for the full-scale model.
    pub fn full_scale(d_in: usize) -> Self {
        Self {
            layers: 2,
            d_in,
            d: 512,
            d_r: 128,
            d_c: 384,
            slope: 0.2,
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: &str| Err(EncoderError::Config(m.to_string()));
        if self.layers == 0 {
            return bad("at least one attention layer is required");
        }
        if self.d_in == 0 || self.d == 0 || self.d_r == 0 || self.d_c == 0 {
            return bad("dimensions must be positive");
        }
        if self.d_r + self.d_c > self.d {
            return bad("d_r + d_c must not exceed d");
        }
        if !(self.slope.is_finite() && self.slope >= 0.0) {
            return bad("LeakyReLU slope must be finite and non-negative");
        }
        Ok(())
    }
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            d_in: 32,
            d: 64,
            d_r: 16,
            d_c: 48,
            slope: 0.2,
        }
    }
}

pub(crate) fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized above")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub gat: Vec<GatLayer>,
    pub gru: GruCell,
    pub decomposer: OrthogonalDecomposer,
}

/// Tape handles for every encoder parameter.
#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub gat: Vec<GatVars>,
    pub gru: GruVars,
    pub basis: Var,
}

impl EncoderVars {
    /// Same order as [`Encoder::parameters`].
    pub fn all(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.gat.iter().flat_map(|g| [g.w, g.a]).collect();
        out.extend(self.gru.all());
        out.push(self.basis);
        out
    }

    /// Inverse of [`EncoderVars::all`] for an encoder with `layers` attention layers.
    pub fn from_slice(layers: usize, vars: &[Var]) -> Result<Self, EncoderError> {
        if vars.len() != 2 * layers + 10 {
            return Err(EncoderError::Config(format!(
                "expected {} encoder variables, got {}",
                2 * layers + 10,
                vars.len()
            )));
        }
        let gat = (0..layers)
            .map(|l| GatVars {
                w: vars[2 * l],
                a: vars[2 * l + 1],
            })
            .collect();
        let g = &vars[2 * layers..];
        Ok(Self {
            gat,
            gru: GruVars {
                w_z: g[0],
                u_z: g[1],
                b_z: g[2],
                w_r: g[3],
                u_r: g[4],
                b_r: g[5],
                w_n: g[6],
                u_n: g[7],
                b_n: g[8],
            },
            basis: g[9],
        })
    }
}

/// Tape outputs of one snapshot encoding.
#[derive(Clone, Debug)]
pub struct EncodedSnapshot {
    pub h: Var,
    pub state: Var,
    pub z_role: Var,
    pub z_comm: Var,
}

impl Encoder {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self, EncoderError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gat = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let d_in = if l == 0 { config.d_in } else { config.d };
            gat.push(GatLayer::new(d_in, config.d, config.slope, &mut rng));
        }
        let gru = GruCell::new(config.d, config.d, &mut rng);
        let decomposer = OrthogonalDecomposer::new(config.d, config.d_r, config.d_c, &mut rng);
        Ok(Self {
            config,
            gat,
            gru,
            decomposer,
        })
    }

    pub fn parameters(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = self.gat.iter().flat_map(|g| [&g.w, &g.a]).collect();
        out.extend(self.gru.parameters());
        out.push(&self.decomposer.basis);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = self
            .gat
            .iter_mut()
            .flat_map(|g| [&mut g.w, &mut g.a])
            .collect();
        out.extend(self.gru.parameters_mut());
        out.push(&mut self.decomposer.basis);
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> EncoderVars {
        EncoderVars {
            gat: self.gat.iter().map(|g| g.bind(tape)).collect(),
            gru: self.gru.bind(tape),
            basis: tape.param(self.decomposer.basis.clone()),
        }
    }

    /// Attention stack, recurrent update from `s_prev`, and decomposition.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &EncoderVars,
        index: &AttentionIndex,
        x: Var,
        s_prev: Var,
    ) -> Result<EncodedSnapshot, EncoderError> {
        let [_, width] = tape.shape(x);
        if width != self.config.d_in {
            return Err(EncoderError::Config(format!(
                "input features have width {width}, encoder expects {}",
                self.config.d_in
            )));
        }
        let mut h = x;
        for (layer, v) in self.gat.iter().zip(&vars.gat) {
            h = gat_forward(tape, *v, layer.slope, index, h)?.h;
        }
        let state = gru_step(tape, &vars.gru, h, s_prev)?;
        let (z_role, z_comm) = decompose(tape, vars.basis, self.config.d_r, state)?;
        Ok(EncodedSnapshot {
            h,
            state,
            z_role,
            z_comm,
        })
    }
}
