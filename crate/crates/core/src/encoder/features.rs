use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::graph::{clustering_coefficient, structural_change, DynamicGraph};
use crate::tensor::Matrix;

use super::EncoderError;

/// Leading columns of generated features: normalized degree, clustering
/// coefficient and neighborhood volatility.
pub const STRUCTURAL_FEATURES: usize = 3;

fn id_rng(seed: u64, id: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(id.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}

/// Input matrix for snapshot position `t` (`|V_t| x d_in`).
///
/// Snapshots that carry features must have exactly `d_in` of them. For the
/// rest, the first three columns are structural and the remaining
/// `d_in - 3` are a fixed Gaussian code per node id, so that the attention
/// stack has something to tell otherwise identical nodes apart.
pub fn node_features(
    graph: &DynamicGraph,
    t: usize,
    d_in: usize,
    seed: u64,
) -> Result<Matrix, EncoderError> {
    let snap = graph.snapshot(t)?;
    let n = snap.node_count();
    if let Some(feats) = snap.features() {
        let width = snap.feature_dim().unwrap_or(0);
        if width != d_in {
            return Err(EncoderError::Config(format!(
                "snapshot {t} has {width} features per node but d_in = {d_in}"
            )));
        }
        let data = feats.iter().flatten().copied().collect();
        return Ok(Matrix::from_vec(n, d_in, data)?);
    }
    if d_in < STRUCTURAL_FEATURES {
        return Err(EncoderError::Config(format!(
            "d_in must be at least {STRUCTURAL_FEATURES} for generated features"
        )));
    }
    let max_degree = snap.degrees().into_iter().max().unwrap_or(0).max(1) as f64;
    let mut out = Matrix::zeros(n, d_in);
    for i in 0..n {
        let id = snap.id(i);
        let volatility = if t > 0 {
            structural_change(graph, t, id).unwrap_or(0.0)
        } else {
            0.0
        };
        let row = out.row_mut(i);
        row[0] = snap.degree(i) as f64 / max_degree;
        row[1] = clustering_coefficient(snap, i);
        row[2] = volatility;
        let mut rng = id_rng(seed, id);
        for v in &mut row[STRUCTURAL_FEATURES..] {
            *v = rng.sample(StandardNormal);
        }
    }
    Ok(out)
}
