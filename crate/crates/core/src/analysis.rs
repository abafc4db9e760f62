//! Derived diagnostics: gamma coordinates and landscape rasterization for
//! the d = M = 2 reduction, Hessian operator-norm sharpness, steps-to-accuracy
//! phase diagrams, and underparameterized excess-risk measurement.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dynamics::{fmt_float, DIVERGENCE_THRESHOLD};
use crate::embeddings::EmbeddingSet;
use crate::error::{CoreError, Result};
use crate::model::{self, Weights};
use crate::rng::derive_rng;
use crate::task::TaskSpec;

/// Which two-dimensional reduction the gamma coordinates refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaBasis {
    /// d = M = 2 plots: `gamma_i = (u_2 - u_1)^T W f_i` with `f_i` the
    /// canonical basis.
    Canonical,
    /// N = 2 theory: `gamma_i = (u_1 - u_2)^T W f_i / 2` with
    /// `f_1 = e_1 + e_2`, `f_2 = e_1 - e_2`.
    Theory,
}

#[derive(Debug, Clone, Copy)]
pub struct GammaCoords {
    pub gamma1: f64,
    pub gamma2: f64,
    pub basis: GammaBasis,
}

/// Project a weight matrix onto its gamma coordinates.
pub fn gamma_of(w: &Weights, emb: &EmbeddingSet, basis: GammaBasis) -> Result<GammaCoords> {
    match basis {
        GammaBasis::Canonical => {
            if emb.d() != 2 || emb.m() != 2 {
                return Err(CoreError::InvalidArgument(
                    "canonical gamma basis requires d = M = 2".into(),
                ));
            }
            let du = emb.u_row(1) - emb.u_row(0);
            let g = w.0.transpose() * du;
            Ok(GammaCoords {
                gamma1: g[0],
                gamma2: g[1],
                basis,
            })
        }
        GammaBasis::Theory => {
            if emb.n() != 2 || emb.m() != 2 {
                return Err(CoreError::InvalidArgument(
                    "theory gamma basis requires N = M = 2".into(),
                ));
            }
            let du = emb.u_row(0) - emb.u_row(1);
            let f1 = emb.e_row(0) + emb.e_row(1);
            let f2 = emb.e_row(0) - emb.e_row(1);
            Ok(GammaCoords {
                gamma1: 0.5 * du.dot(&(&w.0 * f1)),
                gamma2: 0.5 * du.dot(&(&w.0 * f2)),
                basis,
            })
        }
    }
}

/// Reconstruct a weight matrix with the prescribed gamma projections and
/// zero component in the directions the loss ignores. Round-trips with
/// [`gamma_of`] to machine precision.
pub fn w_from_gamma(g: &GammaCoords, emb: &EmbeddingSet) -> Result<Weights> {
    match g.basis {
        GammaBasis::Canonical => {
            if emb.d() != 2 || emb.m() != 2 {
                return Err(CoreError::InvalidArgument(
                    "canonical gamma basis requires d = M = 2".into(),
                ));
            }
            let du = emb.u_row(1) - emb.u_row(0);
            let norm2 = du.norm_squared();
            if norm2 < 1e-300 {
                return Err(CoreError::InvalidArgument(
                    "output embeddings coincide; gamma coordinates undefined".into(),
                ));
            }
            let gv = DVector::from_vec(vec![g.gamma1, g.gamma2]);
            Ok(Weights(du * gv.transpose() / norm2))
        }
        GammaBasis::Theory => {
            if emb.n() != 2 || emb.m() != 2 {
                return Err(CoreError::InvalidArgument(
                    "theory gamma basis requires N = M = 2".into(),
                ));
            }
            let e0 = emb.e_row(0);
            let e1 = emb.e_row(1);
            if (e0.norm() - e1.norm()).abs() > 1e-10 {
                return Err(CoreError::InvalidArgument(
                    "theory gamma basis requires equal-norm input embeddings".into(),
                ));
            }
            let du = emb.u_row(0) - emb.u_row(1);
            let du_norm2 = du.norm_squared();
            let f1 = &e0 + &e1;
            let f2 = &e0 - &e1;
            let mut c = DVector::zeros(emb.d());
            for (gi, fi) in [(g.gamma1, f1), (g.gamma2, f2)] {
                let fn2 = fi.norm_squared();
                if fn2 < 1e-12 {
                    if gi.abs() > 0.0 {
                        return Err(CoreError::InvalidArgument(
                            "gamma component along a degenerate direction".into(),
                        ));
                    }
                    continue;
                }
                c += (2.0 * gi / (du_norm2 * fn2)) * fi;
            }
            Ok(Weights(du * c.transpose()))
        }
    }
}

/// Rectangular gamma grid specification; defaults cover `[-10, 10]^2` at
/// 512 x 512.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub gamma1_range: (f64, f64),
    pub gamma2_range: (f64, f64),
    pub resolution: (usize, usize),
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            gamma1_range: (-10.0, 10.0),
            gamma2_range: (-10.0, 10.0),
            resolution: (512, 512),
        }
    }
}

impl GridSpec {
    pub fn axis1(&self) -> Vec<f64> {
        linspace(self.gamma1_range.0, self.gamma1_range.1, self.resolution.0)
    }

    pub fn axis2(&self) -> Vec<f64> {
        linspace(self.gamma2_range.0, self.gamma2_range.1, self.resolution.1)
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Loss / 0-1 loss (and optionally sharpness) evaluated over a gamma grid.
/// Values are stored row-major with gamma2 as the slow axis:
/// `index = i2 * n1 + i1`.
#[derive(Debug, Clone)]
pub struct LandscapeGrid {
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
    pub loss: Vec<f64>,
    pub zero_one: Vec<f64>,
    pub sharpness: Option<Vec<f64>>,
}

impl LandscapeGrid {
    pub fn value(&self, values: &[f64], i1: usize, i2: usize) -> f64 {
        values[i2 * self.gamma1.len() + i1]
    }

    /// Cell-per-row CSV `axis1,axis2,value` for the given field.
    pub fn to_csv(&self, values: &[f64]) -> String {
        let mut out = String::from("gamma1,gamma2,value\n");
        for (i2, &g2) in self.gamma2.iter().enumerate() {
            for (i1, &g1) in self.gamma1.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{}\n",
                    fmt_float(g1),
                    fmt_float(g2),
                    fmt_float(values[i2 * self.gamma1.len() + i1])
                ));
            }
        }
        out
    }
}

/// Evaluate the loss and 0-1 loss over a gamma grid (d = M = 2 mode).
pub fn landscape(
    emb: &EmbeddingSet,
    task: &TaskSpec,
    spec: &GridSpec,
    with_sharpness: bool,
) -> Result<LandscapeGrid> {
    let axis1 = spec.axis1();
    let axis2 = spec.axis2();
    // Validate the mode once up front.
    let _ = w_from_gamma(
        &GammaCoords {
            gamma1: 0.0,
            gamma2: 0.0,
            basis: GammaBasis::Canonical,
        },
        emb,
    )?;
    let cells: Vec<(f64, f64, Option<f64>)> = axis2
        .par_iter()
        .flat_map(|&g2| {
            let axis1 = &axis1;
            axis1
                .par_iter()
                .map(move |&g1| {
                    let w = w_from_gamma(
                        &GammaCoords {
                            gamma1: g1,
                            gamma2: g2,
                            basis: GammaBasis::Canonical,
                        },
                        emb,
                    )
                    .expect("mode validated");
                    let l = model::loss(&w, emb, task).expect("shapes validated");
                    let z = model::zero_one_loss(&w, emb, task).expect("shapes validated");
                    let s = if with_sharpness {
                        Some(
                            sharpness(&w, emb, task, &SharpnessOptions::default())
                                .expect("shapes validated")
                                .value,
                        )
                    } else {
                        None
                    };
                    (l, z, s)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(LandscapeGrid {
        gamma1: axis1,
        gamma2: axis2,
        loss: cells.iter().map(|c| c.0).collect(),
        zero_one: cells.iter().map(|c| c.1).collect(),
        sharpness: if with_sharpness {
            Some(cells.iter().map(|c| c.2.unwrap()).collect())
        } else {
            None
        },
    })
}

#[derive(Debug, Clone)]
pub struct SharpnessOptions {
    pub rel_tol: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for SharpnessOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            max_iters: 10_000,
            seed: 0x5ea1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SharpnessEstimate {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Largest Hessian eigenvalue (= operator norm, by convexity) via power
/// iteration on Hessian-vector products.
pub fn sharpness(
    w: &Weights,
    emb: &EmbeddingSet,
    task: &TaskSpec,
    opts: &SharpnessOptions,
) -> Result<SharpnessEstimate> {
    let d = emb.d();
    let mut rng = derive_rng(opts.seed, &[0x9a]);
    let mut v = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    v /= v.norm();
    let mut lambda_prev = f64::INFINITY;
    let mut settled = 0;
    for it in 1..=opts.max_iters {
        let hv = model::hessian_vector_product(w, emb, task, &v)?;
        let lambda = v.dot(&hv);
        let norm = hv.norm();
        if norm < 1e-300 {
            // Curvature vanished along every probed direction.
            return Ok(SharpnessEstimate {
                value: 0.0,
                converged: true,
                iterations: it,
            });
        }
        if (lambda - lambda_prev).abs() <= opts.rel_tol * lambda.abs().max(1e-300) {
            settled += 1;
            if settled >= 2 {
                return Ok(SharpnessEstimate {
                    value: lambda,
                    converged: true,
                    iterations: it,
                });
            }
        } else {
            settled = 0;
        }
        lambda_prev = lambda;
        v = hv / norm;
    }
    Ok(SharpnessEstimate {
        value: lambda_prev,
        converged: false,
        iterations: opts.max_iters,
    })
}

/// Outcome of a steps-to-accuracy measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepsOutcome {
    Steps(usize),
    CapReached(usize),
    Diverged,
}

impl StepsOutcome {
    /// Sentinel encoding for serialization: diverged and capped cells map
    /// to the cap value.
    pub fn as_f64(&self) -> f64 {
        match self {
            StepsOutcome::Steps(s) => *s as f64,
            StepsOutcome::CapReached(cap) => *cap as f64,
            StepsOutcome::Diverged => f64::INFINITY,
        }
    }
}

/// Smallest step count t with zero 0-1 loss under constant-step GD from
/// `W_0 = 0`; `cap` bounds the search.
pub fn steps_to_accuracy(
    emb: &EmbeddingSet,
    task: &TaskSpec,
    eta: f64,
    cap: usize,
) -> Result<StepsOutcome> {
    if eta <= 0.0 {
        return Err(CoreError::InvalidArgument("eta must be positive".into()));
    }
    let mut w = Weights::zeros(emb.d());
    if model::zero_one_loss(&w, emb, task)? == 0.0 {
        return Ok(StepsOutcome::Steps(0));
    }
    for step in 1..=cap {
        let g = model::grad(&w, emb, task)?;
        w.0 -= eta * g.0;
        if !w.is_finite() {
            return Ok(StepsOutcome::Diverged);
        }
        if model::zero_one_loss(&w, emb, task)? == 0.0 {
            return Ok(StepsOutcome::Steps(step));
        }
        if model::loss(&w, emb, task)? > DIVERGENCE_THRESHOLD {
            return Ok(StepsOutcome::Diverged);
        }
    }
    Ok(StepsOutcome::CapReached(cap))
}

/// Secondary axis of a phase diagram.
#[derive(Debug, Clone)]
pub enum PhaseAxis {
    /// Input correlation alpha, at fixed `p1`.
    Alpha { values: Vec<f64>, p1: f64 },
    /// Class imbalance `log(p1/p2)`, at fixed alpha.
    LogRatio { values: Vec<f64>, alpha: f64 },
}

#[derive(Debug, Clone)]
pub struct PhaseSpec {
    pub etas: Vec<f64>,
    pub axis: PhaseAxis,
    pub cap: usize,
}

/// Steps-to-accuracy over an (eta x alpha) or (eta x imbalance) grid of
/// two-token instances. Cells are independent and computed in parallel.
#[derive(Debug, Clone)]
pub struct PhaseDiagram {
    pub etas: Vec<f64>,
    pub axis2: Vec<f64>,
    /// Row-major, `index = i_axis2 * n_eta + i_eta`.
    pub cells: Vec<StepsOutcome>,
    pub cap: usize,
}

impl PhaseDiagram {
    pub fn cell(&self, i_eta: usize, i_axis2: usize) -> StepsOutcome {
        self.cells[i_axis2 * self.etas.len() + i_eta]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("eta,axis2,steps\n");
        for (i2, &a2) in self.axis2.iter().enumerate() {
            for (i1, &eta) in self.etas.iter().enumerate() {
                let v = self.cells[i2 * self.etas.len() + i1];
                let v = match v {
                    StepsOutcome::Diverged => self.cap as f64,
                    other => other.as_f64(),
                };
                out.push_str(&format!("{},{},{}\n", fmt_float(eta), fmt_float(a2), fmt_float(v)));
            }
        }
        out
    }
}

fn phase_cell_instance(axis: &PhaseAxis, value: f64) -> Result<(EmbeddingSet, TaskSpec)> {
    let (alpha, p1) = match axis {
        PhaseAxis::Alpha { p1, .. } => (value, *p1),
        PhaseAxis::LogRatio { alpha, .. } => (*alpha, 1.0 / (1.0 + (-value).exp())),
    };
    Ok((EmbeddingSet::correlated_pair(alpha, 2)?, TaskSpec::pair(p1)?))
}

pub fn phase_diagram(spec: &PhaseSpec) -> Result<PhaseDiagram> {
    let axis2 = match &spec.axis {
        PhaseAxis::Alpha { values, .. } | PhaseAxis::LogRatio { values, .. } => values.clone(),
    };
    let jobs: Vec<(f64, f64)> = axis2
        .iter()
        .flat_map(|&a2| spec.etas.iter().map(move |&eta| (eta, a2)))
        .collect();
    let cells: Vec<StepsOutcome> = jobs
        .par_iter()
        .map(|&(eta, a2)| {
            let (emb, task) = phase_cell_instance(&spec.axis, a2).expect("valid grid values");
            steps_to_accuracy(&emb, &task, eta, spec.cap).expect("valid instance")
        })
        .collect();
    Ok(PhaseDiagram {
        etas: spec.etas.clone(),
        axis2,
        cells,
        cap: spec.cap,
    })
}

/// Result of an excess-risk measurement in the underparameterized
/// d = M = 2 mode.
#[derive(Debug, Clone)]
pub struct ExcessRisk {
    /// `L01(argmin L) - min L01`; zero (flagged) for separable instances.
    pub value: f64,
    pub separable: bool,
    pub minimizer: (f64, f64),
    pub l01_at_min: f64,
    pub min_l01: f64,
}

/// Measure the 0-1-loss excess of the cross-entropy minimizer over the best
/// achievable 0-1 loss. Requires d = M = 2 and N >= 3.
pub fn excess_risk(emb: &EmbeddingSet, task: &TaskSpec) -> Result<ExcessRisk> {
    if emb.d() != 2 || emb.m() != 2 {
        return Err(CoreError::InvalidArgument("excess risk requires d = M = 2".into()));
    }
    if emb.n() < 3 {
        return Err(CoreError::InvalidArgument(
            "excess risk targets the underparameterized case N >= 3".into(),
        ));
    }

    let min_l01 = min_zero_one_by_pattern_enumeration(emb, task)?;

    // Separability is exact in two dimensions: the margins depend only on
    // the direction of the gamma vector, so enumerating one direction per
    // angular cell decides whether strictly positive margins are achievable.
    if let Some(_direction) = separating_direction(emb, task)? {
        // The infimum is not attained; report where gradient descent sits
        // after a long run as a representative "minimizer".
        let mut w = Weights::zeros(2);
        for _ in 0..10_000 {
            let g = model::grad(&w, emb, task)?;
            w.0 -= g.0;
        }
        let g = gamma_of(&w, emb, GammaBasis::Canonical)?;
        return Ok(ExcessRisk {
            value: 0.0,
            separable: true,
            minimizer: (g.gamma1, g.gamma2),
            l01_at_min: 0.0,
            min_l01,
        });
    }

    // Coarse gamma-grid search for argmin L.
    let grid = linspace(-10.0, 10.0, 101);
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for &g2 in &grid {
        for &g1 in &grid {
            let wg = w_from_gamma(
                &GammaCoords {
                    gamma1: g1,
                    gamma2: g2,
                    basis: GammaBasis::Canonical,
                },
                emb,
            )?;
            let l = model::loss(&wg, emb, task)?;
            if l < best.0 {
                best = (l, g1, g2);
            }
        }
    }

    // Damped gradient-descent refinement from the best cell.
    let mut w = w_from_gamma(
        &GammaCoords {
            gamma1: best.1,
            gamma2: best.2,
            basis: GammaBasis::Canonical,
        },
        emb,
    )?;
    for _ in 0..2_000_000u64 {
        let g = model::grad(&w, emb, task)?;
        if g.norm() <= 1e-10 {
            break;
        }
        w.0 -= 0.01 * g.0;
    }

    let l01_at_min = model::zero_one_loss(&w, emb, task)?;
    let gmin = gamma_of(&w, emb, GammaBasis::Canonical)?;
    Ok(ExcessRisk {
        value: l01_at_min - min_l01,
        separable: false,
        minimizer: (gmin.gamma1, gmin.gamma2),
        l01_at_min,
        min_l01,
    })
}

/// Exact minimum of the 0-1 loss over all weight matrices in the
/// d = M = 2 mode: the prediction pattern depends only on the direction of
/// the gamma vector, and patterns change only at angles orthogonal to some
/// input embedding, so evaluating one direction per angular cell (plus the
/// all-ties origin) enumerates every achievable pattern.
fn min_zero_one_by_pattern_enumeration(emb: &EmbeddingSet, task: &TaskSpec) -> Result<f64> {
    let l01_of_direction = |g1: f64, g2: f64| -> Result<f64> {
        let w = w_from_gamma(
            &GammaCoords {
                gamma1: g1,
                gamma2: g2,
                basis: GammaBasis::Canonical,
            },
            emb,
        )?;
        model::zero_one_loss(&w, emb, task)
    };
    let mut critical: Vec<f64> = Vec::new();
    for x in 0..emb.n() {
        let e = emb.e_row(x);
        let theta = e[1].atan2(e[0]);
        for off in [
            std::f64::consts::FRAC_PI_2,
            -std::f64::consts::FRAC_PI_2,
        ] {
            let mut a = theta + off;
            while a < 0.0 {
                a += 2.0 * std::f64::consts::PI;
            }
            while a >= 2.0 * std::f64::consts::PI {
                a -= 2.0 * std::f64::consts::PI;
            }
            critical.push(a);
        }
    }
    critical.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best = l01_of_direction(0.0, 0.0)?; // the all-ties origin
    for i in 0..critical.len() {
        let a = critical[i];
        let b = if i + 1 < critical.len() {
            critical[i + 1]
        } else {
            critical[0] + 2.0 * std::f64::consts::PI
        };
        let mid = 0.5 * (a + b);
        best = best.min(l01_of_direction(mid.cos(), mid.sin())?);
        // Boundary directions themselves (ties resolved toward class 0).
        best = best.min(l01_of_direction(a.cos(), a.sin())?);
    }
    Ok(best)
}

/// Exact separability test in the d = M = 2 mode: returns a gamma direction
/// with strictly positive margins for every token, if one exists. Margins
/// depend only on the gamma direction, and their sign pattern is constant on
/// each angular cell cut by the input-orthogonal angles, so checking one
/// interior direction per cell is exhaustive.
fn separating_direction(emb: &EmbeddingSet, task: &TaskSpec) -> Result<Option<(f64, f64)>> {
    let margins_of = |g1: f64, g2: f64| -> Result<Vec<f64>> {
        let w = w_from_gamma(
            &GammaCoords {
                gamma1: g1,
                gamma2: g2,
                basis: GammaBasis::Canonical,
            },
            emb,
        )?;
        model::gap_margins(&w, emb, task)
    };
    let mut critical: Vec<f64> = Vec::new();
    for x in 0..emb.n() {
        let e = emb.e_row(x);
        let theta = e[1].atan2(e[0]);
        for off in [std::f64::consts::FRAC_PI_2, -std::f64::consts::FRAC_PI_2] {
            critical.push((theta + off).rem_euclid(2.0 * std::f64::consts::PI));
        }
    }
    critical.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for i in 0..critical.len() {
        let a = critical[i];
        let b = if i + 1 < critical.len() {
            critical[i + 1]
        } else {
            critical[0] + 2.0 * std::f64::consts::PI
        };
        let mid = 0.5 * (a + b);
        let (g1, g2) = (mid.cos(), mid.sin());
        if margins_of(g1, g2)?.iter().all(|&m| m > 0.0) {
            return Ok(Some((g1, g2)));
        }
    }
    Ok(None)
}

/// Seeded random underparameterized instance (N = 3, d = M = 2):
/// unit-circle input embeddings, orthonormal outputs, random targets and
/// frequencies. Used to search for calibration-failure witnesses.
pub fn random_underparam_instance(seed: u64) -> Result<(EmbeddingSet, TaskSpec)> {
    let mut rng = derive_rng(seed, &[0xe3]);
    let n = 3;
    let mut e = DMatrix::zeros(n, 2);
    for x in 0..n {
        let theta: f64 = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
        e[(x, 0)] = theta.cos();
        e[(x, 1)] = theta.sin();
    }
    let u = DMatrix::identity(2, 2);
    let emb = EmbeddingSet::new(e, u, crate::embeddings::EmbeddingGenerator::Custom)?;
    let f_star: Vec<usize> = (0..n).map(|_| usize::from(rng.random::<bool>())).collect();
    let raw: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().ln()).collect();
    let z: f64 = raw.iter().sum();
    let task = TaskSpec::new(f_star, raw.into_iter().map(|v| v / z).collect(), 2)?;
    Ok((emb, task))
}
