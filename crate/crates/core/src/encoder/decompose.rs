use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::tensor::{Matrix, Tape, TensorError, Var};

/// Rows below this norm after projection count as linearly dependent.
const RANK_TOLERANCE: f64 = 1e-10;

/// Shared orthonormal basis whose first `d_r` rows project onto the role
/// subspace and whose remaining `d_c` rows project onto the community
/// subspace. Orthogonality of the two blocks is structural, not penalized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalDecomposer {
    pub basis: Matrix,
    pub d_r: usize,
    pub d_c: usize,
}

impl OrthogonalDecomposer {
    /// Orthonormalized seeded Gaussian basis. Panics unless `d_r + d_c <= d`.
    pub fn new<R: Rng>(d: usize, d_r: usize, d_c: usize, rng: &mut R) -> Self {
        assert!(
            d_r + d_c <= d && d_r > 0 && d_c > 0,
            "need 0 < d_r, 0 < d_c, d_r + d_c <= d"
        );
        let data = (0..(d_r + d_c) * d)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let mut out = Self {
            basis: Matrix::from_vec(d_r + d_c, d, data).expect("sized above"),
            d_r,
            d_c,
        };
        out.reorthonormalize(rng);
        out
    }

    pub fn from_basis(basis: Matrix, d_r: usize) -> Result<Self, TensorError> {
        if d_r == 0 || d_r >= basis.rows() || basis.rows() > basis.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "decomposer",
                left: basis.shape(),
                right: [d_r, 0],
            });
        }
        let d_c = basis.rows() - d_r;
        Ok(Self { basis, d_r, d_c })
    }

    pub fn dim(&self) -> usize {
        self.basis.cols()
    }

    pub fn w_role(&self) -> Matrix {
        self.basis.slice_rows(0, self.d_r)
    }

    pub fn w_comm(&self) -> Matrix {
        self.basis.slice_rows(self.d_r, self.d_r + self.d_c)
    }

    /// `‖W_role W_commᵀ‖_F`.
    pub fn cross_residual(&self) -> f64 {
        self.w_role()
            .matmul(&self.w_comm().transpose())
            .expect("shared width")
            .frobenius_norm()
    }

    /// `‖B Bᵀ − I‖_F`.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self
            .basis
            .matmul(&self.basis.transpose())
            .expect("square gram");
        gram.sub(&Matrix::identity(self.basis.rows()))
            .frobenius_norm()
    }

    /// Two passes of modified Gram–Schmidt over the rows. A row that
    /// collapses is replaced by a fresh Gaussian direction orthogonal to the
    /// rows before it; the returned list names every replaced row.
    pub fn reorthonormalize<R: Rng>(&mut self, rng: &mut R) -> Vec<String> {
        let d = self.basis.cols();
        let mut warnings = Vec::new();
        for i in 0..self.basis.rows() {
            let mut v = self.basis.row(i).to_vec();
            let original = norm(&v);
            project_out(&self.basis, i, &mut v);
            project_out(&self.basis, i, &mut v);
            let mut n = norm(&v);
            let mut attempts = 0;
            while n <= RANK_TOLERANCE * original.max(1.0) {
                v = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                project_out(&self.basis, i, &mut v);
                project_out(&self.basis, i, &mut v);
                n = norm(&v);
                attempts += 1;
                assert!(attempts < 100, "cannot complete an orthonormal basis");
            }
            if attempts > 0 {
                let msg = format!("basis row {i} was rank deficient and has been re-seeded");
                log::warn!("{msg}");
                warnings.push(msg);
            }
            for (dst, x) in self.basis.row_mut(i).iter_mut().zip(&v) {
                *dst = x / n;
            }
        }
        warnings
    }

    /// Value-level projection of states (`|V| x d`) into both subspaces.
    pub fn project(&self, s: &Matrix) -> Result<(Matrix, Matrix), TensorError> {
        Ok((
            s.matmul(&self.w_role().transpose())?,
            s.matmul(&self.w_comm().transpose())?,
        ))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn project_out(basis: &Matrix, upto: usize, v: &mut [f64]) {
    for j in 0..upto {
        let q = basis.row(j);
        let c: f64 = q.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        for (x, qv) in v.iter_mut().zip(q) {
            *x -= c * qv;
        }
    }
}

/// `(z_role, z_comm) = (s W_roleᵀ, s W_commᵀ)` recorded on the tape.
pub fn decompose(
    tape: &mut Tape,
    basis: Var,
    d_r: usize,
    s: Var,
) -> Result<(Var, Var), TensorError> {
    let rows = tape.shape(basis)[0];
    let w_role = tape.slice_rows(basis, 0, d_r)?;
    let w_comm = tape.slice_rows(basis, d_r, rows)?;
    let role_t = tape.transpose(w_role)?;
    let comm_t = tape.transpose(w_comm)?;
    Ok((tape.matmul(s, role_t)?, tape.matmul(s, comm_t)?))
}
