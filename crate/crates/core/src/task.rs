//! Task specification: target map and token frequencies.

use crate::error::{CoreError, Result};

/// A deterministic target map `f*: [N] -> [M]` together with token
/// frequencies `p` (a probability vector over the N tokens).
///
/// Classes are indexed from 0; ties in `argmax` predictions are broken
/// toward the lowest class index.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    f_star: Vec<usize>,
    p: Vec<f64>,
}

impl TaskSpec {
    pub fn new(f_star: Vec<usize>, p: Vec<f64>, m: usize) -> Result<Self> {
        if f_star.len() != p.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "f_star has {} entries, p has {}",
                f_star.len(),
                p.len()
            )));
        }
        if let Some(&y) = f_star.iter().find(|&&y| y >= m) {
            return Err(CoreError::InvalidArgument(format!(
                "target class {y} out of range (M = {m})"
            )));
        }
        if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(CoreError::InvalidArgument(
                "token frequencies must be finite and non-negative".into(),
            ));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(CoreError::InvalidArgument(format!(
                "token frequencies must sum to 1 (got {total})"
            )));
        }
        Ok(Self { f_star, p })
    }

    /// Identity map `f*(x) = x` with frequencies `p(x) proportional to 1/(x+1)`.
    pub fn zipf_identity(n: usize) -> Result<Self> {
        let raw: Vec<f64> = (0..n).map(|x| 1.0 / (x as f64 + 1.0)).collect();
        let z: f64 = raw.iter().sum();
        Self::new((0..n).collect(), raw.into_iter().map(|v| v / z).collect(), n.max(2))
    }

    /// Two tokens with `f*(x) = x` and frequencies `(p1, 1 - p1)`.
    pub fn pair(p1: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p1) {
            return Err(CoreError::InvalidArgument(format!(
                "p1 must lie in [0, 1], got {p1}"
            )));
        }
        Self::new(vec![0, 1], vec![p1, 1.0 - p1], 2)
    }

    /// Identity map with uniform frequencies.
    pub fn uniform_identity(n: usize) -> Result<Self> {
        Self::new((0..n).collect(), vec![1.0 / n as f64; n], n.max(2))
    }

    pub fn n(&self) -> usize {
        self.f_star.len()
    }

    pub fn f_star(&self, x: usize) -> usize {
        self.f_star[x]
    }

    pub fn targets(&self) -> &[usize] {
        &self.f_star
    }

    pub fn p(&self, x: usize) -> f64 {
        self.p[x]
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.p
    }
}
