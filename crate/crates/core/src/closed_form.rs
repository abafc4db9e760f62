//! Theoretical oracles: the Lambert-W margin solution for the binary
//! orthogonal case, multi-class flow invariants and asymptotic direction,
//! the two-token gamma system, and the one-step loss-spike bound.

use nalgebra::DMatrix;

use crate::embeddings::EmbeddingSet;
use crate::error::{CoreError, Result};
use crate::model::Weights;
use crate::ode::{integrate, OdeOptions};
use crate::task::TaskSpec;

const INV_E: f64 = 1.0 / std::f64::consts::E;

/// Principal branch of the product logarithm: `y` with `y e^y = x`,
/// for `x >= -1/e`. Halley iteration, at most 50 steps.
pub fn lambert_w0(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(CoreError::Domain(format!("lambert_w0 needs finite x, got {x}")));
    }
    if x < -INV_E - 1e-15 {
        return Err(CoreError::Domain(format!(
            "lambert_w0 defined for x >= -1/e, got {x}"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let x = x.max(-INV_E);
    let mut w = if x > std::f64::consts::E {
        let l = x.ln();
        l - l.ln()
    } else if x > -0.3 {
        // Crude rational guess, refined by Halley below.
        x / (1.0 + x.max(0.0))
    } else {
        // Series around the branch point x = -1/e.
        let p = (2.0 * (std::f64::consts::E * x + 1.0)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 * p * p * p / 72.0
    };
    for _ in 0..50 {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        // Halley's derivative vanishes at the branch point; the series
        // initialization is already optimal there.
        if wp1.abs() < 1e-8 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let dw = f / denom;
        if !dw.is_finite() {
            break;
        }
        w -= dw;
        if dw.abs() <= 1e-14 * (1.0 + w.abs()) {
            break;
        }
    }
    Ok(w)
}

/// `W0(exp(y))`, stable for arguments far beyond floating-point range of
/// `exp(y)`: solves `w + log w = y` directly when `y` is large.
pub fn lambert_w0_exp(y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(CoreError::Domain(format!("lambert_w0_exp needs finite y, got {y}")));
    }
    if y <= 30.0 {
        return lambert_w0(y.exp());
    }
    let mut w = y - y.ln();
    for _ in 0..50 {
        let f = w + w.ln() - y;
        let dw = f / (1.0 + 1.0 / w);
        w -= dw;
        if dw.abs() <= 1e-14 * (1.0 + w.abs()) {
            break;
        }
    }
    Ok(w)
}

/// Binary orthogonal gradient-flow setting: per-token constant
/// `c = p(x) |e_x|^2 |u_1 - u_2|^2` and initial margin `m0`.
#[derive(Debug, Clone, Copy)]
pub struct BinaryOrthogonalInstance {
    pub c: f64,
    pub m0: f64,
}

impl BinaryOrthogonalInstance {
    pub fn new(c: f64, m0: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(CoreError::InvalidArgument(format!("need c > 0, got {c}")));
        }
        Ok(Self { c, m0 })
    }

    /// Time offset `t0 = -(exp(m0) + m0) / c`.
    pub fn t0(&self) -> f64 {
        -(self.m0.exp() + self.m0) / self.c
    }
}

/// Exact gradient-flow margin of the binary orthogonal case: the solution
/// of `m + exp(m) = c (t - t0)`.
///
/// Values `t < t0` are still computable but lie outside the regime where
/// the `log - h` expansion applies.
pub fn binary_margin_closed(inst: &BinaryOrthogonalInstance, t: f64) -> Result<f64> {
    let y = inst.c * (t - inst.t0());
    let mut m = y - lambert_w0_exp(y)?;
    // One Newton polish on m + e^m = y in margin space; keeps the
    // defining identity exact to machine precision.
    for _ in 0..3 {
        let em = m.exp();
        let f = m + em - y;
        if f == 0.0 {
            break;
        }
        m -= f / (1.0 + em);
    }
    Ok(m)
}

/// The sandwich `0 <= log(x) - m <= 2 log(x) / x` valid for `x >= 1`;
/// returns the interval `(0, 2 log(x)/x)`.
pub fn h_bound(x: f64) -> Result<(f64, f64)> {
    if !(x >= 1.0) {
        return Err(CoreError::Domain(format!("h_bound defined for x >= 1, got {x}")));
    }
    Ok((0.0, 2.0 * x.ln() / x))
}

/// Conserved quantities of the orthonormal multi-class flow: the values
/// `exp(-w_i) - exp(-w_j)` over pairs `i < j` with `i, j != target`.
pub fn multiclass_invariants(w_row: &[f64], target: usize) -> Vec<f64> {
    let m = w_row.len();
    let mut out = Vec::new();
    for i in 0..m {
        if i == target {
            continue;
        }
        for j in (i + 1)..m {
            if j == target {
                continue;
            }
            out.push((-w_row[i]).exp() - (-w_row[j]).exp());
        }
    }
    out
}

/// Asymptotic direction of the orthonormal gradient flow:
/// `D = sum_x P(u_{f*(x)}) (x) e_x` with `P` the orthogonal projector onto
/// `span{u_i - u_j}`, plus the proportionality constant `(M-1)/(sqrt(2) M)`.
pub fn asymptotic_direction(emb: &EmbeddingSet, task: &TaskSpec) -> Result<(Weights, f64)> {
    if !emb.is_orthonormal(1e-10) {
        return Err(CoreError::InvalidArgument(
            "asymptotic direction requires orthonormal embeddings".into(),
        ));
    }
    if task.n() != emb.n() {
        return Err(CoreError::ShapeMismatch("task/embedding N mismatch".into()));
    }
    let m = emb.m();
    let d = emb.d();
    // For orthonormal u: P(u_y) = u_y - (sum_i u_i) / M.
    let mut s = nalgebra::DVector::zeros(d);
    for i in 0..m {
        s += emb.u_row(i);
    }
    s /= m as f64;
    let mut dir = DMatrix::zeros(d, d);
    for x in 0..task.n() {
        let proj = emb.u_row(task.f_star(x)) - &s;
        dir += proj * emb.e_row(x).transpose();
    }
    let constant = (m as f64 - 1.0) / (std::f64::consts::SQRT_2 * m as f64);
    Ok((Weights(dir), constant))
}

/// Two interfering tokens: frequencies `(p1, p2)` with `p1 >= p2`
/// (normalized by swapping), input correlation `alpha`, and
/// `c = |u_1 - u_2|^2`.
#[derive(Debug, Clone, Copy)]
pub struct TwoTokenInstance {
    pub p1: f64,
    pub p2: f64,
    pub alpha: f64,
    pub c: f64,
}

impl TwoTokenInstance {
    pub fn new(p1: f64, alpha: f64, c: f64) -> Result<Self> {
        if !(0.0 < p1 && p1 < 1.0) {
            return Err(CoreError::InvalidArgument(format!(
                "p1 must lie in (0, 1), got {p1}"
            )));
        }
        if alpha.abs() > 1.0 {
            return Err(CoreError::InvalidArgument(format!(
                "|alpha| must be <= 1, got {alpha}"
            )));
        }
        if !(c > 0.0) {
            return Err(CoreError::InvalidArgument(format!("need c > 0, got {c}")));
        }
        let (p1, p2) = if p1 >= 0.5 { (p1, 1.0 - p1) } else { (1.0 - p1, p1) };
        Ok(Self { p1, p2, alpha, c })
    }

    /// `c0 = (1 - alpha) c`.
    pub fn c0(&self) -> f64 {
        (1.0 - self.alpha) * self.c
    }

    /// `gamma_bar = log(p1/p2) / 2`, the gamma_1 attractor.
    pub fn gamma_bar(&self) -> f64 {
        0.5 * (self.p1 / self.p2).ln()
    }
}

/// Right-hand side of the gamma system in `ct`-time:
/// `(d gamma_1 / d(ct), d gamma_2 / d(ct))`.
pub fn gamma_ode_rhs(inst: &TwoTokenInstance, gamma1: f64, gamma2: f64) -> (f64, f64) {
    let a = inst.p1 / (1.0 + (gamma2 + gamma1).exp());
    let b = inst.p2 / (1.0 + (gamma2 - gamma1).exp());
    (
        (1.0 + inst.alpha) * (a - b),
        (1.0 - inst.alpha) * (a + b),
    )
}

/// One gradient-descent step of the gamma system. The real-time rate is
/// `(c/2) * rhs` (the gamma projection carries a 1/2), so the step is
/// `gamma <- gamma + eta (c/2) rhs(gamma)`.
pub fn gamma_gd_step(inst: &TwoTokenInstance, eta: f64, gamma1: f64, gamma2: f64) -> (f64, f64) {
    let (d1, d2) = gamma_ode_rhs(inst, gamma1, gamma2);
    let s = 0.5 * eta * inst.c;
    (gamma1 + s * d1, gamma2 + s * d2)
}

/// One step of the two-token margin recursion
/// `dm_i = c eta (p_i/(1+e^{m_i}) - alpha p_j/(1+e^{m_j}))`.
pub fn two_token_margin_step(inst: &TwoTokenInstance, eta: f64, m1: f64, m2: f64) -> (f64, f64) {
    let s1 = 1.0 / (1.0 + m1.exp());
    let s2 = 1.0 / (1.0 + m2.exp());
    (
        m1 + inst.c * eta * (inst.p1 * s1 - inst.alpha * inst.p2 * s2),
        m2 + inst.c * eta * (inst.p2 * s2 - inst.alpha * inst.p1 * s1),
    )
}

/// Integrate the gamma flow from `(0, 0)` in real time
/// (`d gamma / dt = (c/2) * rhs`), returning `(gamma1, gamma2)` at the
/// requested times.
pub fn gamma_flow(
    inst: &TwoTokenInstance,
    record_times: &[f64],
    opts: &OdeOptions,
) -> Result<Vec<(f64, (f64, f64))>> {
    let s = 0.5 * inst.c;
    let inst = *inst;
    let y0 = nalgebra::DVector::from_vec(vec![0.0, 0.0]);
    let sol = integrate(
        move |_t, y: &nalgebra::DVector<f64>| {
            let (d1, d2) = gamma_ode_rhs(&inst, y[0], y[1]);
            nalgebra::DVector::from_vec(vec![s * d1, s * d2])
        },
        0.0,
        y0,
        record_times,
        opts,
    )?;
    Ok(sol.into_iter().map(|(t, y)| (t, (y[0], y[1]))).collect())
}

/// Limit of `gamma_1` under gradient flow: `log(p1/p2) / 2`.
pub fn gamma1_limit(inst: &TwoTokenInstance) -> f64 {
    inst.gamma_bar()
}

/// The gradient-descent envelope for the gamma coordinates.
#[derive(Debug, Clone, Copy)]
pub struct GdGammaBounds {
    /// Lower edge of the gamma_1 envelope: `min(0, gamma_bar - eta c (1-alpha) p2)`.
    pub gamma1_min: f64,
    /// Upper edge: `gamma_bar + p1/(2 p2) + eta c (1-alpha) p1`.
    pub gamma1_max: f64,
    /// Constant in the gamma_2 lower bound: `c1 = (1-alpha) c p2`.
    pub c1: f64,
    pub eta: f64,
}

impl GdGammaBounds {
    /// `gamma_2(t) >= log(eta c1 t / 2 + 1)` for zero initialization.
    pub fn gamma2_lower(&self, t: f64) -> f64 {
        (self.eta * self.c1 * t / 2.0 + 1.0).ln()
    }
}

/// Envelope of the gamma coordinates under gradient descent with step
/// size `eta >= 0`.
pub fn gd_gamma_bounds(inst: &TwoTokenInstance, eta: f64) -> Result<GdGammaBounds> {
    if eta < 0.0 {
        return Err(CoreError::InvalidArgument(format!("need eta >= 0, got {eta}")));
    }
    let gbar = inst.gamma_bar();
    let spread = eta * inst.c * (1.0 - inst.alpha);
    Ok(GdGammaBounds {
        gamma1_min: (gbar - spread * inst.p2).min(0.0),
        gamma1_max: gbar + inst.p1 / (2.0 * inst.p2) + spread * inst.p1,
        c1: inst.c0() * inst.p2,
        eta,
    })
}

/// Sign rule threshold for `d gamma_1`: `d gamma_1 <= 0` iff
/// `sinh(gamma_1 - gamma_bar) >= C(gamma_2)`.
pub fn dgamma1_sign_threshold(inst: &TwoTokenInstance, gamma2: f64) -> f64 {
    (inst.p1 - inst.p2) * (-gamma2).exp() / (2.0 * (inst.p1 * inst.p2).sqrt())
}

/// One-step loss-spike lower bound after a single gradient update from
/// `W_0 = 0` with learning rate `eta`: `L(W_1) >= eta (alpha p1 - p2) p2`,
/// valid under the proof's unit-constant normalization (see `applicable`).
#[derive(Debug, Clone, Copy)]
pub struct SpikeBound {
    pub value: f64,
    /// False when `alpha p1 <= p2`, where the bound degenerates to 0.
    pub applicable: bool,
}

pub fn spike_lower_bound(inst: &TwoTokenInstance, eta: f64) -> Result<SpikeBound> {
    if eta < 0.0 {
        return Err(CoreError::InvalidArgument(format!("need eta >= 0, got {eta}")));
    }
    let excess = inst.alpha * inst.p1 - inst.p2;
    if excess > 0.0 {
        Ok(SpikeBound {
            value: eta * excess * inst.p2,
            applicable: true,
        })
    } else {
        Ok(SpikeBound {
            value: 0.0,
            applicable: false,
        })
    }
}
