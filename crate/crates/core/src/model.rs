//! The associative-memory model: predictions, cross-entropy loss, exact
//! gradient, Hessian-vector products and margins.
//!
//! Convention: the score of class `y` on token `x` is `u_y^T W e_x`
//! everywhere in this crate. All operations are pure.

use nalgebra::{DMatrix, DVector};

use crate::embeddings::EmbeddingSet;
use crate::error::{CoreError, Result};
use crate::task::TaskSpec;

/// The d x d memory matrix, the sole trainable object.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights(pub DMatrix<f64>);

impl Weights {
    pub fn zeros(d: usize) -> Self {
        Weights(DMatrix::zeros(d, d))
    }

    /// Rank-one memory `u_y (x) e_x` scaled by `s`.
    pub fn outer(emb: &EmbeddingSet, y: usize, x: usize, s: f64) -> Self {
        let u = emb.u_row(y);
        let e = emb.e_row(x);
        Weights(s * u * e.transpose())
    }

    pub fn d(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_inner(&self, other: &Weights) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

/// Per-token margins: pairwise `m_i(x) = (u_{f*(x)} - u_i)^T W e_x` and the
/// gap margin (minimum over i != f*(x)). The token is classified correctly
/// iff the gap is positive.
#[derive(Debug, Clone)]
pub struct MarginVector {
    pub pairwise: Vec<f64>,
    pub gap: f64,
}

fn check_shapes(w: &Weights, emb: &EmbeddingSet) -> Result<()> {
    if w.0.nrows() != emb.d() || w.0.ncols() != emb.d() {
        return Err(CoreError::ShapeMismatch(format!(
            "weights are {}x{}, embeddings have d = {}",
            w.0.nrows(),
            w.0.ncols(),
            emb.d()
        )));
    }
    Ok(())
}

fn check_task(emb: &EmbeddingSet, task: &TaskSpec) -> Result<()> {
    if task.n() != emb.n() {
        return Err(CoreError::ShapeMismatch(format!(
            "task has N = {}, embeddings have N = {}",
            task.n(),
            emb.n()
        )));
    }
    if let Some(&y) = task.targets().iter().find(|&&y| y >= emb.m()) {
        return Err(CoreError::InvalidArgument(format!(
            "target class {y} out of range (M = {})",
            emb.m()
        )));
    }
    Ok(())
}

/// Score table S with `S[(x, y)] = u_y^T W e_x`, shape N x M.
pub fn score_table(w: &Weights, emb: &EmbeddingSet) -> Result<DMatrix<f64>> {
    check_shapes(w, emb)?;
    Ok(emb.e() * w.0.transpose() * emb.u().transpose())
}

/// Softmax over classes for each token row of the score table,
/// computed with the row-max subtracted.
pub fn softmax_rows(scores: &DMatrix<f64>) -> DMatrix<f64> {
    let mut probs = scores.clone();
    for mut row in probs.row_iter_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    probs
}

fn argmax_lowest(scores: &DMatrix<f64>, x: usize) -> usize {
    let mut best = 0;
    for j in 1..scores.ncols() {
        if scores[(x, j)] > scores[(x, best)] {
            best = j;
        }
    }
    best
}

/// Predicted class `argmax_y u_y^T W e_x`; ties broken toward the lowest index.
pub fn predict(w: &Weights, emb: &EmbeddingSet, x: usize) -> Result<usize> {
    check_shapes(w, emb)?;
    if x >= emb.n() {
        return Err(CoreError::TokenOutOfRange { index: x, n: emb.n() });
    }
    let scores = emb.u() * (w.0.clone() * emb.e_row(x));
    let mut best = 0;
    for (j, &v) in scores.iter().enumerate().skip(1) {
        if v > scores[best] {
            best = j;
        }
    }
    Ok(best)
}

/// Population cross-entropy `sum_x p(x) [log sum_z exp(s_xz) - s_{x f*(x)}]`.
pub fn loss(w: &Weights, emb: &EmbeddingSet, task: &TaskSpec) -> Result<f64> {
    check_shapes(w, emb)?;
    check_task(emb, task)?;
    let scores = score_table(w, emb)?;
    let mut total = 0.0;
    for x in 0..emb.n() {
        let row = scores.row(x);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        total += task.p(x) * (lse - row[task.f_star(x)]);
    }
    Ok(total)
}

/// Weighted 0-1 loss `sum_x p(x) 1[predict(x) != f*(x)]`.
pub fn zero_one_loss(w: &Weights, emb: &EmbeddingSet, task: &TaskSpec) -> Result<f64> {
    check_shapes(w, emb)?;
    check_task(emb, task)?;
    let scores = score_table(w, emb)?;
    let mut total = 0.0;
    for x in 0..emb.n() {
        if argmax_lowest(&scores, x) != task.f_star(x) {
            total += task.p(x);
        }
    }
    Ok(total)
}

/// Exact loss gradient `sum_x p(x) sum_z p_W(z|x) (u_z - u_{f*(x)}) (x) e_x`.
pub fn grad(w: &Weights, emb: &EmbeddingSet, task: &TaskSpec) -> Result<Weights> {
    check_shapes(w, emb)?;
    check_task(emb, task)?;
    let probs = softmax_rows(&score_table(w, emb)?);
    // C[(x, z)] = p(x) (p_W(z|x) - delta_{z, f*(x)}); grad = U^T C^T E.
    let mut c = probs;
    for x in 0..emb.n() {
        let px = task.p(x);
        let y = task.f_star(x);
        for z in 0..emb.m() {
            c[(x, z)] *= px;
        }
        c[(x, y)] -= px;
    }
    Ok(Weights(emb.u().transpose() * c.transpose() * emb.e()))
}

/// Batch-weighted gradient: same formula with `p` replaced by arbitrary
/// non-negative weights (used for mini-batch estimates).
pub fn grad_weighted(
    w: &Weights,
    emb: &EmbeddingSet,
    task: &TaskSpec,
    weights: &[f64],
) -> Result<Weights> {
    check_shapes(w, emb)?;
    check_task(emb, task)?;
    if weights.len() != emb.n() {
        return Err(CoreError::ShapeMismatch(format!(
            "got {} token weights for N = {}",
            weights.len(),
            emb.n()
        )));
    }
    let probs = softmax_rows(&score_table(w, emb)?);
    let mut c = probs;
    for x in 0..emb.n() {
        let px = weights[x];
        let y = task.f_star(x);
        for z in 0..emb.m() {
            c[(x, z)] *= px;
        }
        c[(x, y)] -= px;
    }
    Ok(Weights(emb.u().transpose() * c.transpose() * emb.e()))
}

/// Apply the loss Hessian (a symmetric PSD operator on d x d matrices) to `V`.
pub fn hessian_vector_product(
    w: &Weights,
    emb: &EmbeddingSet,
    task: &TaskSpec,
    v: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_shapes(w, emb)?;
    check_task(emb, task)?;
    if v.nrows() != emb.d() || v.ncols() != emb.d() {
        return Err(CoreError::ShapeMismatch(format!(
            "direction is {}x{}, expected {}x{}",
            v.nrows(),
            v.ncols(),
            emb.d(),
            emb.d()
        )));
    }
    let probs = softmax_rows(&score_table(w, emb)?);
    let mut out = DMatrix::zeros(emb.d(), emb.d());
    for x in 0..emb.n() {
        let ex = emb.e_row(x);
        // a_z = u_z^T V e_x
        let a = emb.u() * (v * &ex);
        let mut mean_a = 0.0;
        for z in 0..emb.m() {
            mean_a += probs[(x, z)] * a[z];
        }
        let mut left = DVector::zeros(emb.d());
        for z in 0..emb.m() {
            let coeff = probs[(x, z)] * (a[z] - mean_a);
            left += coeff * emb.u_row(z);
        }
        out += task.p(x) * left * ex.transpose();
    }
    Ok(out)
}

/// Dense materialization of the Hessian as a d^2 x d^2 matrix acting on
/// column-major vectorized weights. Intended as a test oracle; restricted
/// to small instances (`d * M <= 64`).
pub fn hessian_dense(w: &Weights, emb: &EmbeddingSet, task: &TaskSpec) -> Result<DMatrix<f64>> {
    check_shapes(w, emb)?;
    check_task(emb, task)?;
    let d = emb.d();
    if d * emb.m() > 64 {
        return Err(CoreError::InvalidArgument(format!(
            "dense Hessian restricted to d*M <= 64 (got {})",
            d * emb.m()
        )));
    }
    let probs = softmax_rows(&score_table(w, emb)?);
    let mut h = DMatrix::zeros(d * d, d * d);
    for x in 0..emb.n() {
        let ex = emb.e_row(x);
        let gs: Vec<DVector<f64>> = (0..emb.m())
            .map(|z| {
                let g = emb.u_row(z) * ex.transpose();
                DVector::from_column_slice(g.as_slice())
            })
            .collect();
        let mut mean = DVector::zeros(d * d);
        for z in 0..emb.m() {
            mean += probs[(x, z)] * &gs[z];
        }
        let mut hx = DMatrix::zeros(d * d, d * d);
        for z in 0..emb.m() {
            hx += probs[(x, z)] * &gs[z] * gs[z].transpose();
        }
        hx -= &mean * mean.transpose();
        h += task.p(x) * hx;
    }
    Ok(h)
}

/// Margins per token; see [`MarginVector`].
pub fn margins(w: &Weights, emb: &EmbeddingSet, task: &TaskSpec) -> Result<Vec<MarginVector>> {
    check_shapes(w, emb)?;
    check_task(emb, task)?;
    let scores = score_table(w, emb)?;
    let mut out = Vec::with_capacity(emb.n());
    for x in 0..emb.n() {
        let y = task.f_star(x);
        let target_score = scores[(x, y)];
        let pairwise: Vec<f64> = (0..emb.m()).map(|i| target_score - scores[(x, i)]).collect();
        let gap = pairwise
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != y)
            .map(|(_, &v)| v)
            .fold(f64::INFINITY, f64::min);
        out.push(MarginVector { pairwise, gap });
    }
    Ok(out)
}

/// Gap margins only, one per token.
pub fn gap_margins(w: &Weights, emb: &EmbeddingSet, task: &TaskSpec) -> Result<Vec<f64>> {
    Ok(margins(w, emb, task)?.into_iter().map(|m| m.gap).collect())
}
