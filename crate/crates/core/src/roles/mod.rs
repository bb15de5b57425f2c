//! Node roles: prototype vectors seeded from binary structural priors,
//! per-node role affinities, community role composition and evolution
//! events derived from composition changes.

mod evolution;

pub use evolution::{
    classify_event, community_composition, composition_delta, compositions, match_communities,
    track_events, CommunityComposition, CommunityEvent, EventLabel, EventThresholds,
    EvolutionDelta, PartitionView,
};

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Matrix, Tape, TensorError, Var};

pub const ROLE_COUNT: usize = 5;
/// Seven structural/temporal prior features plus a recency bit.
pub const PRIOR_DIM: usize = 8;
pub const PROTOTYPE_HIDDEN: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoleError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("noise sigma must be finite and >= 0, got {0}")]
    Sigma(f64),
    #[error("labels cover {labels} nodes but affinities have {rows} rows")]
    Misaligned { labels: usize, rows: usize },
}

/// The five roles in their fixed order (also the tie-break order).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Leader,
    Contributor,
    Wanderer,
    Connector,
    Newcomer,
}

impl Role {
    pub const ALL: [Role; ROLE_COUNT] = [
        Role::Leader,
        Role::Contributor,
        Role::Wanderer,
        Role::Connector,
        Role::Newcomer,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Role> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Leader => "Leader",
            Role::Contributor => "Contributor",
            Role::Wanderer => "Wanderer",
            Role::Connector => "Connector",
            Role::Newcomer => "Newcomer",
        }
    }

    pub fn plural(self) -> &'static str {
        match self {
            Role::Leader => "Leaders",
            Role::Contributor => "Contributors",
            Role::Wanderer => "Wanderers",
            Role::Connector => "Connectors",
            Role::Newcomer => "Newcomers",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Binary prior over degree, betweenness, closeness, clustering,
/// intra-community density, volatility, stability and recency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolePrior {
    pub role: Role,
    pub vector: [f64; PRIOR_DIM],
}

pub fn role_priors() -> [RolePrior; ROLE_COUNT] {
    let row = |role, vector| RolePrior { role, vector };
    [
        row(Role::Leader, [1., 0., 1., 1., 1., 0., 1., 0.]),
        row(Role::Contributor, [1., 0., 0., 1., 1., 0., 1., 0.]),
        row(Role::Wanderer, [0., 0., 0., 0., 0., 1., 0., 0.]),
        row(Role::Connector, [1., 1., 0., 0., 0., 0., 1., 0.]),
        row(Role::Newcomer, [0., 0., 0., 0., 0., 1., 0., 1.]),
    ]
}

/// Prototypes `P = MLP(F_prior) + ε` with a tanh hidden layer. The noise
/// `ε` is drawn once at initialization; the perceptron stays trainable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub priors: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub noise: Matrix,
    pub sigma: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct PrototypeVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl PrototypeVars {
    pub fn all(&self) -> [Var; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    pub fn from_slice(v: &[Var]) -> Self {
        Self {
            w1: v[0],
            b1: v[1],
            w2: v[2],
            b2: v[3],
        }
    }
}

/// Deterministic under `seed`; `sigma = 0` removes the noise term.
pub fn init_prototypes(
    priors: &[RolePrior; ROLE_COUNT],
    d_r: usize,
    sigma: f64,
    seed: u64,
) -> Result<PrototypeSet, RoleError> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(RoleError::Sigma(sigma));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = Matrix::from_rows(&priors.iter().map(|p| p.vector.to_vec()).collect::<Vec<_>>())?;
    let w1 = crate::encoder::glorot(PROTOTYPE_HIDDEN, PRIOR_DIM, &mut rng);
    let w2 = crate::encoder::glorot(d_r, PROTOTYPE_HIDDEN, &mut rng);
    let noise = if sigma > 0.0 {
        let dist = Normal::new(0.0, sigma).expect("sigma checked");
        Matrix::from_vec(
            ROLE_COUNT,
            d_r,
            (0..ROLE_COUNT * d_r)
                .map(|_| dist.sample(&mut rng))
                .collect(),
        )?
    } else {
        Matrix::zeros(ROLE_COUNT, d_r)
    };
    Ok(PrototypeSet {
        priors: f,
        w1,
        b1: Matrix::zeros(1, PROTOTYPE_HIDDEN),
        w2,
        b2: Matrix::zeros(1, d_r),
        noise,
        sigma,
    })
}

impl PrototypeSet {
    pub fn d_r(&self) -> usize {
        self.w2.rows()
    }

    pub fn parameters(&self) -> [&Matrix; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn parameters_mut(&mut self) -> [&mut Matrix; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn bind(&self, tape: &mut Tape) -> PrototypeVars {
        let [w1, b1, w2, b2] = self.parameters().map(|m| tape.param(m.clone()));
        PrototypeVars { w1, b1, w2, b2 }
    }

    /// `5 x d_r` prototype matrix on the tape.
    pub fn forward(&self, tape: &mut Tape, vars: &PrototypeVars) -> Result<Var, RoleError> {
        let f = tape.constant(self.priors.clone());
        let w1t = tape.transpose(vars.w1)?;
        let hidden = tape.matmul(f, w1t)?;
        let hidden = tape.add_row_broadcast(hidden, vars.b1)?;
        let hidden = tape.tanh(hidden)?;
        let w2t = tape.transpose(vars.w2)?;
        let out = tape.matmul(hidden, w2t)?;
        let out = tape.add_row_broadcast(out, vars.b2)?;
        let noise = tape.constant(self.noise.clone());
        Ok(tape.add(out, noise)?)
    }

    pub fn prototypes(&self) -> Matrix {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let p = self
            .forward(&mut tape, &vars)
            .expect("shapes fixed at construction");
        tape.value(p).clone()
    }
}

/// `π_ik = softmax_k(cos(z_i, p_k) / τ_r)`; a zero `z_i` gets uniform affinity.
pub fn role_affinity(
    tape: &mut Tape,
    z_role: Var,
    prototypes: Var,
    tau_r: f64,
) -> Result<Var, RoleError> {
    if !(tau_r > 0.0) {
        return Err(RoleError::Temperature(tau_r));
    }
    let zn = tape.normalize_rows(z_role)?;
    let pn = tape.normalize_rows(prototypes)?;
    let pt = tape.transpose(pn)?;
    let cos = tape.matmul(zn, pt)?;
    let scaled = tape.scalar_mul(cos, 1.0 / tau_r)?;
    Ok(tape.row_softmax(scaled)?)
}

/// Value-level role affinities.
pub fn role_affinity_values(
    z_role: &Matrix,
    prototypes: &Matrix,
    tau_r: f64,
) -> Result<Matrix, RoleError> {
    let mut tape = Tape::new();
    let z = tape.constant(z_role.clone());
    let p = tape.constant(prototypes.clone());
    let pi = role_affinity(&mut tape, z, p, tau_r)?;
    Ok(tape.value(pi).clone())
}

/// Prototype loss parts on the tape.
#[derive(Clone, Copy, Debug)]
pub struct PrototypeLoss {
    pub total: Var,
    pub attraction: Var,
    pub diversity: Var,
}

/// `−mean_i log π_{i,k*} + sign · λ2 · Σ_k π̂_k log π̂_k`, with `k*` the
/// current row argmax and `π̂` the column mean. With `sign = +1` the second
/// term is `−λ2·H(π̂)`, so minimizing it spreads mass across prototypes.
pub fn prototype_loss(
    tape: &mut Tape,
    pi: Var,
    lambda2: f64,
    sign: f64,
) -> Result<PrototypeLoss, RoleError> {
    let [n, k] = tape.shape(pi);
    let values = tape.value(pi).clone();
    let mut mask = Matrix::zeros(n, k);
    for i in 0..n {
        mask.set(i, values.row_argmax(i), 1.0);
    }
    let log_pi = tape.log(pi)?;
    let mask = tape.constant(mask);
    let picked = tape.dot(log_pi, mask)?;
    let attraction = tape.scalar_mul(picked, -1.0 / n.max(1) as f64)?;

    let mean_row = tape.constant(Matrix::filled(1, n, 1.0 / n.max(1) as f64));
    let pi_hat = tape.matmul(mean_row, pi)?;
    let log_hat = tape.log(pi_hat)?;
    let neg_entropy = tape.dot(pi_hat, log_hat)?;
    let diversity = tape.scalar_mul(neg_entropy, sign * lambda2)?;
    Ok(PrototypeLoss {
        total: tape.add(attraction, diversity)?,
        attraction,
        diversity,
    })
}

/// Dominant role of an affinity row, ties broken by [`Role::ALL`] order.
pub fn dominant_role(pi_row: &[f64]) -> Role {
    Role::from_index(crate::tensor::argmax(pi_row)).expect("five affinities")
}
