//! Interacting-particle view of the training dynamics.
//!
//! The particle table `w_ij = u_j^T W e_i` is a derived view of the weight
//! matrix: dynamics run in weight space, while this module reproduces their
//! updates from the correlation data alone, for verification and for the
//! small analytic settings.

use nalgebra::DMatrix;

use crate::embeddings::EmbeddingSet;
use crate::error::{CoreError, Result};
use crate::model::{score_table, Weights};
use crate::task::TaskSpec;

/// Constant correlation parameters: `alpha[(i, j)] = <e_i, e_j>` and
/// `beta[i][j][k] = <u_i, u_j - u_k>` (antisymmetric in its last two indices).
#[derive(Debug, Clone)]
pub struct CorrelationData {
    pub alpha: DMatrix<f64>,
    beta: Vec<f64>,
    m: usize,
}

impl CorrelationData {
    pub fn beta(&self, i: usize, j: usize, k: usize) -> f64 {
        self.beta[(i * self.m + j) * self.m + k]
    }
}

/// Exact inner products of the embedding families.
pub fn correlations(emb: &EmbeddingSet) -> CorrelationData {
    let alpha = emb.e() * emb.e().transpose();
    let m = emb.m();
    let uu = emb.u() * emb.u().transpose();
    let mut beta = vec![0.0; m * m * m];
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                beta[(i * m + j) * m + k] = uu[(i, j)] - uu[(i, k)];
            }
        }
    }
    CorrelationData { alpha, beta, m }
}

/// The N x M table of score projections `w_ij = u_j^T W e_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    pub w: DMatrix<f64>,
}

/// Project a weight matrix onto the particle table.
pub fn project(w: &Weights, emb: &EmbeddingSet) -> Result<ParticleState> {
    Ok(ParticleState {
        w: score_table(w, emb)?,
    })
}

/// One descent update of the particle table:
/// `dw_ij = eta * sum_x weight(x) alpha_ix sum_z beta_{j, f*(x), z} softmax_z(w_x.)`.
///
/// `batch = None` uses the population frequencies; otherwise the empirical
/// frequency of each token in the batch (count / batch size), which makes
/// mini-batch steps unbiased estimates of the full-batch step.
pub fn particle_update(
    state: &ParticleState,
    corr: &CorrelationData,
    task: &TaskSpec,
    eta: f64,
    batch: Option<&[usize]>,
) -> Result<DMatrix<f64>> {
    if eta <= 0.0 {
        return Err(CoreError::InvalidArgument(format!(
            "learning rate must be positive, got {eta}"
        )));
    }
    let n = state.w.nrows();
    let m = state.w.ncols();
    if corr.alpha.nrows() != n || corr.m != m || task.n() != n {
        return Err(CoreError::ShapeMismatch(
            "particle table, correlations and task disagree on (N, M)".into(),
        ));
    }
    let mut weight = vec![0.0; n];
    match batch {
        None => {
            for (x, w) in weight.iter_mut().enumerate() {
                *w = task.p(x);
            }
        }
        Some(tokens) => {
            if tokens.is_empty() {
                return Err(CoreError::InvalidArgument("empty mini-batch".into()));
            }
            for &x in tokens {
                if x >= n {
                    return Err(CoreError::TokenOutOfRange { index: x, n });
                }
                weight[x] += 1.0 / tokens.len() as f64;
            }
        }
    }

    // Softmax over each token row of the particle table.
    let mut probs = state.w.clone();
    for x in 0..n {
        let mut max = f64::NEG_INFINITY;
        for k in 0..m {
            max = max.max(probs[(x, k)]);
        }
        let mut total = 0.0;
        for k in 0..m {
            probs[(x, k)] = (probs[(x, k)] - max).exp();
            total += probs[(x, k)];
        }
        for k in 0..m {
            probs[(x, k)] /= total;
        }
    }

    let mut delta = DMatrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for x in 0..n {
                if weight[x] == 0.0 || corr.alpha[(i, x)] == 0.0 {
                    continue;
                }
                let y = task.f_star(x);
                let mut inner = 0.0;
                for z in 0..m {
                    if z == y {
                        continue; // beta_{j, y, y} = 0 by antisymmetry
                    }
                    inner += corr.beta(j, y, z) * probs[(x, z)];
                }
                acc += weight[x] * corr.alpha[(i, x)] * inner;
            }
            delta[(i, j)] = eta * acc;
        }
    }
    Ok(delta)
}
