//! Self-contained property suite used as a release gate: finite-difference
//! oracles for the gradient and Hessian, convexity, closed-form/numeric
//! agreement, conserved quantities, and coordinate round-trips.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::analysis::{self, GammaBasis, GammaCoords, SharpnessOptions};
use crate::closed_form::{self, BinaryOrthogonalInstance, TwoTokenInstance};
use crate::dynamics::{DynamicsConfig, RecordCadence};
use crate::embeddings::EmbeddingSet;
use crate::error::Result;
use crate::model::{self, Weights};
use crate::ode::OdeOptions;
use crate::rng::derive_rng;
use crate::task::TaskSpec;

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    /// Tighten closed-form comparison tolerances from 1e-6 to 1e-8.
    pub strict: bool,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            strict: false,
            seed: 7,
        }
    }
}

impl VerifyOptions {
    fn closed_form_tol(&self) -> f64 {
        if self.strict {
            1e-8
        } else {
            1e-6
        }
    }
}

#[derive(Debug, Clone)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    /// Worst observed error (NaN when the property errored out).
    pub error: f64,
    pub tolerance: f64,
    pub detail: String,
    pub millis: f64,
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub results: Vec<PropertyResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }
}

/// Maximum Frobenius-relative deviation of `grad_fn` from a central
/// finite-difference gradient of the loss (step 1e-5). Injectable so tests
/// can confirm the check rejects a corrupted gradient.
pub fn gradient_check_with<G>(
    w: &Weights,
    emb: &EmbeddingSet,
    task: &TaskSpec,
    grad_fn: G,
) -> Result<f64>
where
    G: Fn(&Weights, &EmbeddingSet, &TaskSpec) -> Result<Weights>,
{
    let g = grad_fn(w, emb, task)?;
    let fd = fd_grad(w, emb, task, 1e-5)?;
    let scale = g.norm().max(1e-12);
    Ok((&fd.0 - &g.0).norm() / scale)
}

/// Central finite-difference gradient of the loss.
pub fn fd_grad(w: &Weights, emb: &EmbeddingSet, task: &TaskSpec, h: f64) -> Result<Weights> {
    let d = w.d();
    let mut out = DMatrix::zeros(d, d);
    let mut wp = w.clone();
    for i in 0..d {
        for j in 0..d {
            let orig = wp.0[(i, j)];
            wp.0[(i, j)] = orig + h;
            let lp = model::loss(&wp, emb, task)?;
            wp.0[(i, j)] = orig - h;
            let lm = model::loss(&wp, emb, task)?;
            wp.0[(i, j)] = orig;
            out[(i, j)] = (lp - lm) / (2.0 * h);
        }
    }
    Ok(Weights(out))
}

fn random_instance(seed: u64, n: usize, m: usize, d: usize) -> Result<(EmbeddingSet, TaskSpec)> {
    let mut rng = derive_rng(seed, &[0x1f]);
    let emb = EmbeddingSet::sphere(n, m, d, seed, &mut rng)?;
    let f_star: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
    let raw: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().ln()).collect();
    let z: f64 = raw.iter().sum();
    let task = TaskSpec::new(f_star, raw.into_iter().map(|v| v / z).collect(), m)?;
    Ok((emb, task))
}

fn random_weights(seed: u64, d: usize, scale: f64) -> Weights {
    let mut rng = derive_rng(seed, &[0x2f]);
    Weights(DMatrix::from_fn(d, d, |_, _| {
        scale * rng.sample::<f64, _>(StandardNormal)
    }))
}

fn prop_gradient_fd(opts: &VerifyOptions) -> Result<(f64, String)> {
    let mut worst: f64 = 0.0;
    for k in 0..3u64 {
        let (emb, task) = random_instance(opts.seed.wrapping_add(k), 4, 3, 5)?;
        let w = random_weights(opts.seed.wrapping_add(k), 5, 1.0);
        let err = gradient_check_with(&w, &emb, &task, model::grad)?;
        worst = worst.max(err);
    }
    Ok((worst, "3 random sphere instances, central FD step 1e-5".into()))
}

fn prop_hvp_fd(opts: &VerifyOptions) -> Result<(f64, String)> {
    let mut worst: f64 = 0.0;
    let h = 1e-5;
    for k in 0..3u64 {
        let (emb, task) = random_instance(opts.seed.wrapping_add(10 + k), 4, 3, 5)?;
        let w = random_weights(opts.seed.wrapping_add(10 + k), 5, 1.0);
        let v = random_weights(opts.seed.wrapping_add(20 + k), 5, 1.0);
        let hv = model::hessian_vector_product(&w, &emb, &task, &v.0)?;
        let gp = model::grad(&Weights(&w.0 + h * &v.0), &emb, &task)?;
        let gm = model::grad(&Weights(&w.0 - h * &v.0), &emb, &task)?;
        let fd = (gp.0 - gm.0) / (2.0 * h);
        let err = (&fd - &hv).norm() / hv.norm().max(1e-12);
        worst = worst.max(err);
    }
    Ok((worst, "HVP vs central FD of the gradient".into()))
}

fn prop_hessian_symmetric_psd(opts: &VerifyOptions) -> Result<(f64, String)> {
    let mut worst: f64 = 0.0;
    for k in 0..3u64 {
        let (emb, task) = random_instance(opts.seed.wrapping_add(30 + k), 4, 3, 5)?;
        let w = random_weights(opts.seed.wrapping_add(30 + k), 5, 1.0);
        let v1 = random_weights(opts.seed.wrapping_add(40 + k), 5, 1.0);
        let v2 = random_weights(opts.seed.wrapping_add(50 + k), 5, 1.0);
        let hv1 = model::hessian_vector_product(&w, &emb, &task, &v1.0)?;
        let hv2 = model::hessian_vector_product(&w, &emb, &task, &v2.0)?;
        let a = v2.0.dot(&hv1);
        let b = v1.0.dot(&hv2);
        worst = worst.max((a - b).abs() / a.abs().max(1e-12));
        // PSD: Rayleigh quotients must be non-negative.
        let q1 = v1.0.dot(&hv1) / v1.0.norm_squared();
        let q2 = v2.0.dot(&hv2) / v2.0.norm_squared();
        worst = worst.max((-q1).max(0.0)).max((-q2).max(0.0));
    }
    Ok((worst, "bilinear symmetry and Rayleigh non-negativity".into()))
}

fn prop_convexity(opts: &VerifyOptions) -> Result<(f64, String)> {
    let mut worst: f64 = 0.0;
    for k in 0..5u64 {
        let (emb, task) = random_instance(opts.seed.wrapping_add(60 + k), 4, 3, 5)?;
        let wa = random_weights(opts.seed.wrapping_add(60 + k), 5, 2.0);
        let wb = random_weights(opts.seed.wrapping_add(70 + k), 5, 2.0);
        let la = model::loss(&wa, &emb, &task)?;
        let lb = model::loss(&wb, &emb, &task)?;
        let mid = Weights(0.5 * (&wa.0 + &wb.0));
        let lm = model::loss(&mid, &emb, &task)?;
        // Midpoint convexity violation, relative to the loss scale.
        let viol = (lm - 0.5 * (la + lb)) / la.abs().max(lb.abs()).max(1.0);
        worst = worst.max(viol.max(0.0));
    }
    Ok((worst, "midpoint convexity on random segments".into()))
}

fn prop_closed_form_margin(opts: &VerifyOptions) -> Result<(f64, String)> {
    let _ = opts;
    let emb = EmbeddingSet::orthonormal(3, 2, 4)?;
    let task = TaskSpec::new(vec![0, 1, 0], vec![0.5, 0.3, 0.2], 2)?;
    let mut cfg = DynamicsConfig::gf(20.0);
    cfg.cadence = RecordCadence::Times(vec![0.5, 2.0, 8.0, 20.0]);
    cfg.rtol = 1e-10;
    cfg.atol = 1e-12;
    let rec = crate::dynamics::gf_run(&Weights::zeros(4), &emb, &task, &cfg)?;
    let mut worst: f64 = 0.0;
    for (k, &t) in rec.times.iter().enumerate() {
        for x in 0..3 {
            // c_x = p(x) |e_x|^2 |u_1 - u_2|^2 = 2 p(x) here.
            let inst = BinaryOrthogonalInstance::new(2.0 * task.p(x), 0.0)?;
            let exact = closed_form::binary_margin_closed(&inst, t)?;
            let err = (rec.margins[k][x] - exact).abs() / exact.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok((worst, "binary orthogonal flow vs Lambert-W margins".into()))
}

fn prop_gamma_flow(opts: &VerifyOptions) -> Result<(f64, String)> {
    let _ = opts;
    let alpha = 0.5;
    let p1 = 0.7;
    let emb = EmbeddingSet::correlated_pair(alpha, 2)?;
    let task = TaskSpec::pair(p1)?;
    let inst = TwoTokenInstance::new(p1, alpha, 2.0)?;
    let times = vec![0.5, 2.0, 10.0];

    let mut cfg = DynamicsConfig::gf(10.0);
    cfg.cadence = RecordCadence::Times(times.clone());
    cfg.rtol = 1e-10;
    cfg.atol = 1e-12;
    cfg.record_gamma = Some(GammaBasis::Theory);
    let rec = crate::dynamics::gf_run(&Weights::zeros(2), &emb, &task, &cfg)?;
    let gammas = rec.gamma.as_ref().expect("gamma recording enabled");

    let ode_opts = OdeOptions {
        rtol: 1e-10,
        atol: 1e-12,
        ..OdeOptions::default()
    };
    let theory = closed_form::gamma_flow(&inst, &times, &ode_opts)?;
    let mut worst: f64 = 0.0;
    for (k, (_, (g1, g2))) in theory.iter().enumerate() {
        let err1 = (gammas[k].0 - g1).abs() / g1.abs().max(1.0);
        let err2 = (gammas[k].1 - g2).abs() / g2.abs().max(1.0);
        worst = worst.max(err1).max(err2);
    }
    Ok((worst, "weight-space flow vs the reduced gamma system".into()))
}

fn prop_invariants(opts: &VerifyOptions) -> Result<(f64, String)> {
    let _ = opts;
    let emb = EmbeddingSet::orthonormal(2, 4, 6)?;
    let task = TaskSpec::new(vec![0, 1], vec![0.6, 0.4], 4)?;
    let mut cfg = DynamicsConfig::gf(10.0);
    cfg.cadence = RecordCadence::Times(vec![10.0]);
    cfg.rtol = 1e-10;
    cfg.atol = 1e-12;
    let rec = crate::dynamics::gf_run(&Weights::zeros(6), &emb, &task, &cfg)?;
    let table = model::score_table(&rec.final_w, &emb)?;
    let mut worst: f64 = 0.0;
    for x in 0..2 {
        let row: Vec<f64> = (0..4).map(|j| table[(x, j)]).collect();
        let scale = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != task.f_star(x))
            .map(|(_, &w)| (-w).exp())
            .fold(1.0f64, f64::max);
        for inv in closed_form::multiclass_invariants(&row, task.f_star(x)) {
            // Zero at t = 0, so any value is pure drift.
            worst = worst.max(inv.abs() / scale);
        }
    }
    Ok((worst, "exp(-w_i) - exp(-w_j) conserved off-target".into()))
}

fn prop_sharpness_dense(opts: &VerifyOptions) -> Result<(f64, String)> {
    let mut worst: f64 = 0.0;
    for k in 0..2u64 {
        let (emb, task) = random_instance(opts.seed.wrapping_add(80 + k), 3, 3, 4)?;
        let w = random_weights(opts.seed.wrapping_add(80 + k), 4, 1.0);
        let est = analysis::sharpness(&w, &emb, &task, &SharpnessOptions::default())?;
        let dense = model::hessian_dense(&w, &emb, &task)?;
        let eig = dense.symmetric_eigen();
        let top = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max((est.value - top).abs() / top.abs().max(1e-12));
    }
    Ok((worst, "power iteration vs dense eigendecomposition".into()))
}

fn prop_gamma_roundtrip(opts: &VerifyOptions) -> Result<(f64, String)> {
    let mut worst: f64 = 0.0;
    let emb_canon = EmbeddingSet::correlated_pair(0.3, 2)?;
    let emb_theory = EmbeddingSet::correlated_pair(0.3, 3)?;
    let mut rng = derive_rng(opts.seed, &[0x77]);
    for _ in 0..20 {
        let g1: f64 = rng.sample::<f64, _>(StandardNormal);
        let g2: f64 = rng.sample::<f64, _>(StandardNormal);
        for (basis, emb) in [
            (GammaBasis::Canonical, &emb_canon),
            (GammaBasis::Theory, &emb_theory),
        ] {
            let coords = GammaCoords {
                gamma1: 3.0 * g1,
                gamma2: 3.0 * g2,
                basis,
            };
            let w = analysis::w_from_gamma(&coords, emb)?;
            let back = analysis::gamma_of(&w, emb, basis)?;
            worst = worst
                .max((back.gamma1 - coords.gamma1).abs())
                .max((back.gamma2 - coords.gamma2).abs());
        }
    }
    Ok((worst, "w_from_gamma then gamma_of is the identity".into()))
}

/// Run the full property suite.
pub fn run(opts: &VerifyOptions) -> VerifyReport {
    type Prop = fn(&VerifyOptions) -> Result<(f64, String)>;
    let cf_tol = opts.closed_form_tol();
    let props: Vec<(&str, f64, Prop)> = vec![
        ("gradient-matches-finite-differences", 1e-6, prop_gradient_fd),
        ("hvp-matches-finite-differences", 1e-5, prop_hvp_fd),
        ("hessian-symmetric-psd", 1e-10, prop_hessian_symmetric_psd),
        ("loss-convex-along-segments", 1e-12, prop_convexity),
        ("closed-form-margin-matches-flow", cf_tol, prop_closed_form_margin),
        ("gamma-system-matches-weight-flow", cf_tol, prop_gamma_flow),
        ("flow-invariants-conserved", cf_tol, prop_invariants),
        ("sharpness-matches-dense-eigensolver", 1e-7, prop_sharpness_dense),
        ("gamma-roundtrip-exact", 1e-12, prop_gamma_roundtrip),
    ];
    let mut results = Vec::with_capacity(props.len());
    for (name, tol, prop) in props {
        let start = Instant::now();
        let (passed, error, detail) = match prop(opts) {
            Ok((err, detail)) => (err <= tol, err, detail),
            Err(e) => (false, f64::NAN, format!("errored: {e}")),
        };
        results.push(PropertyResult {
            name: name.to_string(),
            passed,
            error,
            tolerance: tol,
            detail,
            millis: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    VerifyReport { results }
}
