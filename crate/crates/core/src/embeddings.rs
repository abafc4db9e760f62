//! Input/output token embeddings and their generators.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{CoreError, Result};

/// How an embedding set was produced; recorded for reproducibility.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingGenerator {
    /// Canonical orthonormal rows.
    Orthonormal,
    /// Two unit input embeddings with inner product `alpha`.
    CorrelatedPair { alpha: f64 },
    /// Rows sampled uniformly on the unit sphere.
    Sphere { seed: u64 },
    /// Supplied directly by the caller.
    Custom,
}

/// Fixed input rows `e_x` (N x d) and output rows `u_y` (M x d).
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    e: DMatrix<f64>,
    u: DMatrix<f64>,
    generator: EmbeddingGenerator,
}

impl EmbeddingSet {
    pub fn new(e: DMatrix<f64>, u: DMatrix<f64>, generator: EmbeddingGenerator) -> Result<Self> {
        let d = e.ncols();
        if u.ncols() != d {
            return Err(CoreError::ShapeMismatch(format!(
                "input embeddings have d = {d}, output embeddings have d = {}",
                u.ncols()
            )));
        }
        if e.nrows() < 1 || u.nrows() < 2 || d < 2 {
            return Err(CoreError::InvalidArgument(format!(
                "need N >= 1, M >= 2, d >= 2 (got N = {}, M = {}, d = {})",
                e.nrows(),
                u.nrows(),
                d
            )));
        }
        if e.iter().chain(u.iter()).any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidArgument(
                "embeddings contain non-finite entries".into(),
            ));
        }
        Ok(Self { e, u, generator })
    }

    /// Canonical-basis orthonormal embeddings; requires `n <= d` and `m <= d`.
    pub fn orthonormal(n: usize, m: usize, d: usize) -> Result<Self> {
        if n > d || m > d {
            return Err(CoreError::InvalidArgument(format!(
                "orthonormal embeddings need n <= d and m <= d (n = {n}, m = {m}, d = {d})"
            )));
        }
        let e = DMatrix::from_fn(n, d, |i, j| if i == j { 1.0 } else { 0.0 });
        let u = DMatrix::from_fn(m, d, |i, j| if i == j { 1.0 } else { 0.0 });
        Self::new(e, u, EmbeddingGenerator::Orthonormal)
    }

    /// Two unit input embeddings with correlation `alpha` and two orthonormal
    /// output embeddings, in dimension `d >= 2`.
    pub fn correlated_pair(alpha: f64, d: usize) -> Result<Self> {
        if !(-1.0..=1.0).contains(&alpha) {
            return Err(CoreError::InvalidArgument(format!(
                "correlation alpha must lie in [-1, 1], got {alpha}"
            )));
        }
        if d < 2 {
            return Err(CoreError::InvalidArgument("need d >= 2".into()));
        }
        let mut e = DMatrix::zeros(2, d);
        e[(0, 0)] = 1.0;
        e[(1, 0)] = alpha;
        e[(1, 1)] = (1.0 - alpha * alpha).sqrt();
        let u = DMatrix::from_fn(2, d, |i, j| if i == j { 1.0 } else { 0.0 });
        Self::new(e, u, EmbeddingGenerator::CorrelatedPair { alpha })
    }

    /// Rows sampled uniformly on the unit sphere in `R^d`.
    pub fn sphere(n: usize, m: usize, d: usize, seed: u64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut row = |_: usize| {
            let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|x| *x /= norm);
            } else {
                v[0] = 1.0;
            }
            v
        };
        let e_rows: Vec<Vec<f64>> = (0..n).map(&mut row).collect();
        let u_rows: Vec<Vec<f64>> = (0..m).map(&mut row).collect();
        let e = DMatrix::from_fn(n, d, |i, j| e_rows[i][j]);
        let u = DMatrix::from_fn(m, d, |i, j| u_rows[i][j]);
        Self::new(e, u, EmbeddingGenerator::Sphere { seed })
    }

    pub fn n(&self) -> usize {
        self.e.nrows()
    }

    pub fn m(&self) -> usize {
        self.u.nrows()
    }

    pub fn d(&self) -> usize {
        self.e.ncols()
    }

    /// Input rows, N x d.
    pub fn e(&self) -> &DMatrix<f64> {
        &self.e
    }

    /// Output rows, M x d.
    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn generator(&self) -> &EmbeddingGenerator {
        &self.generator
    }

    /// Input embedding of token `x` as a column vector.
    pub fn e_row(&self, x: usize) -> nalgebra::DVector<f64> {
        self.e.row(x).transpose()
    }

    /// Output embedding of class `y` as a column vector.
    pub fn u_row(&self, y: usize) -> nalgebra::DVector<f64> {
        self.u.row(y).transpose()
    }

    /// Rescale every input row by `s` (changes the per-token constants c_x).
    pub fn scale_inputs(mut self, s: f64) -> Self {
        self.e *= s;
        self.generator = EmbeddingGenerator::Custom;
        self
    }

    /// Rescale every output row by `s`.
    pub fn scale_outputs(mut self, s: f64) -> Self {
        self.u *= s;
        self.generator = EmbeddingGenerator::Custom;
        self
    }

    /// True when both families have orthonormal rows (up to `tol`).
    pub fn is_orthonormal(&self, tol: f64) -> bool {
        let gram_ok = |m: &DMatrix<f64>| {
            let g = m * m.transpose();
            g.row_iter().enumerate().all(|(i, row)| {
                row.iter()
                    .enumerate()
                    .all(|(j, &v)| (v - if i == j { 1.0 } else { 0.0 }).abs() <= tol)
            })
        };
        gram_ok(&self.e) && gram_ok(&self.u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;

    #[test]
    fn orthonormal_is_orthonormal() {
        let emb = EmbeddingSet::orthonormal(3, 4, 6).unwrap();
        assert!(emb.is_orthonormal(1e-12));
        assert_eq!((emb.n(), emb.m(), emb.d()), (3, 4, 6));
    }

    #[test]
    fn correlated_pair_inner_product() {
        let emb = EmbeddingSet::correlated_pair(0.95, 2).unwrap();
        let dot = emb.e_row(0).dot(&emb.e_row(1));
        assert!((dot - 0.95).abs() < 1e-12);
        assert!((emb.e_row(1).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_rows_unit_norm() {
        let mut rng = derive_rng(3, &[0]);
        let emb = EmbeddingSet::sphere(5, 5, 8, 3, &mut rng).unwrap();
        for i in 0..5 {
            assert!((emb.e_row(i).norm() - 1.0).abs() < 1e-12);
            assert!((emb.u_row(i).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_degenerate_shapes() {
        assert!(EmbeddingSet::orthonormal(3, 2, 2).is_err());
        let e = DMatrix::zeros(1, 2);
        let u = DMatrix::zeros(1, 2);
        assert!(EmbeddingSet::new(e, u, EmbeddingGenerator::Custom).is_err());
    }
}
