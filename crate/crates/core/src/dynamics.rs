//! The four gradient dynamics: gradient flow, gradient descent, and their
//! stochastic counterparts, with schedules, seeding and trajectory recording.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::analysis::{gamma_of, sharpness, GammaBasis, SharpnessOptions};
use crate::embeddings::EmbeddingSet;
use crate::error::{CoreError, Result};
use crate::model::{self, Weights};
use crate::ode::{integrate, OdeOptions};
use crate::rng::derive_rng;
use crate::task::TaskSpec;

/// Loss values above this threshold mark a run as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynamicsKind {
    GradientFlow,
    GradientDescent,
    StochasticGradientDescent,
    StochasticGradientFlow,
}

/// Constant or per-step tabulated scalar schedule.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Constant(f64),
    Table(Vec<f64>),
}

impl Schedule {
    pub fn at(&self, step: usize) -> f64 {
        match self {
            Schedule::Constant(v) => *v,
            Schedule::Table(t) => t[step.min(t.len().saturating_sub(1))],
        }
    }
}

/// When to snapshot the trajectory. Discrete dynamics interpret values as
/// step counts, continuous ones as times.
#[derive(Debug, Clone, PartialEq)]
pub enum RecordCadence {
    /// Every k-th step (discrete) or every dt of time (continuous).
    Every(f64),
    /// A fixed number of log-spaced points over the horizon, plus t = 0.
    LogSpaced(usize),
    /// Explicit times / step indices (non-decreasing).
    Times(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct DynamicsConfig {
    pub kind: DynamicsKind,
    pub eta: Schedule,
    pub batch_size: usize,
    pub sigma: Schedule,
    /// Horizon: continuous time for GF/SGF, step count for GD/SGD.
    pub t_end: f64,
    pub seed: u64,
    pub cadence: RecordCadence,
    /// Integration tolerances for gradient flow.
    pub rtol: f64,
    pub atol: f64,
    /// Fixed Euler-Maruyama step for SGF.
    pub step: f64,
    /// Record gamma coordinates in the given basis.
    pub record_gamma: Option<GammaBasis>,
    /// Record the Hessian operator norm at each snapshot.
    pub record_sharpness: bool,
}

impl DynamicsConfig {
    pub fn new(kind: DynamicsKind, eta: f64, t_end: f64) -> Self {
        Self {
            kind,
            eta: Schedule::Constant(eta),
            batch_size: 1,
            sigma: Schedule::Constant(0.0),
            t_end,
            seed: 0,
            cadence: RecordCadence::Every(1.0),
            rtol: 1e-8,
            atol: 1e-8,
            step: 1e-2,
            record_gamma: None,
            record_sharpness: false,
        }
    }

    pub fn gd(eta: f64, steps: usize) -> Self {
        Self::new(DynamicsKind::GradientDescent, eta, steps as f64)
    }

    pub fn gf(t_end: f64) -> Self {
        Self::new(DynamicsKind::GradientFlow, 1.0, t_end)
    }

    fn validate(&self) -> Result<()> {
        match &self.eta {
            Schedule::Constant(v) if *v < 0.0 => {
                return Err(CoreError::InvalidArgument("negative learning rate".into()))
            }
            Schedule::Table(t) if t.iter().any(|v| *v < 0.0) => {
                return Err(CoreError::InvalidArgument("negative learning rate".into()))
            }
            _ => {}
        }
        if self.t_end < 0.0 {
            return Err(CoreError::InvalidArgument("negative horizon".into()));
        }
        if self.kind == DynamicsKind::StochasticGradientDescent && self.batch_size == 0 {
            return Err(CoreError::InvalidArgument("batch size must be positive".into()));
        }
        if self.kind == DynamicsKind::StochasticGradientFlow && self.step <= 0.0 {
            return Err(CoreError::InvalidArgument("SGF step must be positive".into()));
        }
        Ok(())
    }

    /// Record times over `[0, t_end]`.
    fn record_times(&self) -> Vec<f64> {
        match &self.cadence {
            RecordCadence::Every(dt) => {
                let dt = dt.max(f64::MIN_POSITIVE);
                let mut times = vec![0.0];
                let mut t = dt;
                while t < self.t_end - 1e-12 * self.t_end.max(1.0) {
                    times.push(t);
                    t += dt;
                }
                if self.t_end > 0.0 {
                    times.push(self.t_end);
                }
                times
            }
            RecordCadence::LogSpaced(points) => {
                let mut times = vec![0.0];
                if self.t_end > 0.0 && *points > 0 {
                    let lo = (self.t_end * 1e-6).max(1e-6).min(self.t_end);
                    let n = (*points).max(2);
                    for i in 0..n {
                        let f = i as f64 / (n - 1) as f64;
                        times.push(lo * (self.t_end / lo).powf(f));
                    }
                }
                times.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
                times
            }
            RecordCadence::Times(t) => t.clone(),
        }
    }

    /// Record steps for discrete dynamics (unique, sorted, includes 0 and the end).
    fn record_steps(&self, total: usize) -> Vec<usize> {
        let mut steps: Vec<usize> = match &self.cadence {
            RecordCadence::Every(k) => {
                let k = (*k).max(1.0) as usize;
                let mut s: Vec<usize> = (0..=total).step_by(k).collect();
                if *s.last().unwrap_or(&0) != total {
                    s.push(total);
                }
                s
            }
            RecordCadence::LogSpaced(points) => {
                let mut s = vec![0usize, total.min(1)];
                let n = (*points).max(2);
                for i in 0..n {
                    let f = i as f64 / (n - 1) as f64;
                    s.push(((total as f64).powf(f)).round() as usize);
                }
                s
            }
            RecordCadence::Times(t) => t.iter().map(|&v| v.round() as usize).collect(),
        };
        steps.retain(|&s| s <= total);
        steps.sort_unstable();
        steps.dedup();
        steps
    }
}

/// Time-indexed record of a run. Immutable once returned.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub loss: Vec<f64>,
    pub zero_one: Vec<f64>,
    /// Per-token gap margins at each snapshot.
    pub margins: Vec<Vec<f64>>,
    pub gamma: Option<Vec<(f64, f64)>>,
    pub sharpness: Option<Vec<f64>>,
    pub final_w: Weights,
    pub diverged: bool,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss.last().unwrap_or(&f64::NAN)
    }

    /// CSV with header `t,loss,zero_one,margin_1..margin_N[,gamma1,gamma2][,sharpness]`,
    /// 17 significant digits, LF line endings.
    pub fn to_csv(&self) -> String {
        let n = self.margins.first().map_or(0, |m| m.len());
        let mut header = String::from("t,loss,zero_one");
        for i in 1..=n {
            header.push_str(&format!(",margin_{i}"));
        }
        if self.gamma.is_some() {
            header.push_str(",gamma1,gamma2");
        }
        if self.sharpness.is_some() {
            header.push_str(",sharpness");
        }
        let mut out = header;
        out.push('\n');
        for k in 0..self.times.len() {
            let mut fields = vec![
                fmt_float(self.times[k]),
                fmt_float(self.loss[k]),
                fmt_float(self.zero_one[k]),
            ];
            for &m in &self.margins[k] {
                fields.push(fmt_float(m));
            }
            if let Some(g) = &self.gamma {
                fields.push(fmt_float(g[k].0));
                fields.push(fmt_float(g[k].1));
            }
            if let Some(s) = &self.sharpness {
                fields.push(fmt_float(s[k]));
            }
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

/// 17 significant digits, '.' decimal separator.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

struct Recorder<'a> {
    emb: &'a EmbeddingSet,
    task: &'a TaskSpec,
    cfg: &'a DynamicsConfig,
    times: Vec<f64>,
    loss: Vec<f64>,
    zero_one: Vec<f64>,
    margins: Vec<Vec<f64>>,
    gamma: Vec<(f64, f64)>,
    sharp: Vec<f64>,
    diverged: bool,
}

impl<'a> Recorder<'a> {
    fn new(emb: &'a EmbeddingSet, task: &'a TaskSpec, cfg: &'a DynamicsConfig) -> Self {
        Self {
            emb,
            task,
            cfg,
            times: Vec::new(),
            loss: Vec::new(),
            zero_one: Vec::new(),
            margins: Vec::new(),
            gamma: Vec::new(),
            sharp: Vec::new(),
            diverged: false,
        }
    }

    /// Returns false when the run should stop (divergence).
    fn snapshot(&mut self, t: f64, w: &Weights) -> Result<bool> {
        let l = if w.is_finite() {
            model::loss(w, self.emb, self.task)?
        } else {
            f64::NAN
        };
        if !l.is_finite() || l > DIVERGENCE_THRESHOLD {
            self.diverged = true;
            return Ok(false);
        }
        self.times.push(t);
        self.loss.push(l);
        self.zero_one.push(model::zero_one_loss(w, self.emb, self.task)?);
        self.margins.push(model::gap_margins(w, self.emb, self.task)?);
        if let Some(basis) = self.cfg.record_gamma {
            let g = gamma_of(w, self.emb, basis)?;
            self.gamma.push((g.gamma1, g.gamma2));
        }
        if self.cfg.record_sharpness {
            let est = sharpness(w, self.emb, self.task, &SharpnessOptions::default())?;
            self.sharp.push(est.value);
        }
        Ok(true)
    }

    fn finish(self, final_w: Weights) -> TrajectoryRecord {
        TrajectoryRecord {
            times: self.times,
            loss: self.loss,
            zero_one: self.zero_one,
            margins: self.margins,
            gamma: self.cfg.record_gamma.map(|_| self.gamma),
            sharpness: if self.cfg.record_sharpness {
                Some(self.sharp)
            } else {
                None
            },
            final_w,
            diverged: self.diverged,
        }
    }
}

/// Full-batch gradient descent `W_{t+1} = W_t - eta_t grad L(W_t)`.
pub fn gd_run(
    w0: &Weights,
    emb: &EmbeddingSet,
    task: &TaskSpec,
    cfg: &DynamicsConfig,
) -> Result<TrajectoryRecord> {
    if cfg.kind != DynamicsKind::GradientDescent {
        return Err(CoreError::InvalidArgument("config kind is not GD".into()));
    }
    descent_loop(w0, emb, task, cfg, |_, _| None)
}

/// Mini-batch stochastic gradient descent; each step samples `batch_size`
/// tokens i.i.d. from `p` and applies a GD step on the batch loss.
pub fn sgd_run(
    w0: &Weights,
    emb: &EmbeddingSet,
    task: &TaskSpec,
    cfg: &DynamicsConfig,
) -> Result<TrajectoryRecord> {
    if cfg.kind != DynamicsKind::StochasticGradientDescent {
        return Err(CoreError::InvalidArgument("config kind is not SGD".into()));
    }
    let mut rng = derive_rng(cfg.seed, &[0x5d]);
    let cum: Vec<f64> = task
        .frequencies()
        .iter()
        .scan(0.0, |acc, &p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let n = task.n();
    let batch_size = cfg.batch_size;
    descent_loop(w0, emb, task, cfg, move |_, weights| {
        weights.iter_mut().for_each(|w| *w = 0.0);
        for _ in 0..batch_size {
            let r: f64 = rng.random();
            let ix = cum.partition_point(|&c| c < r).min(n - 1);
            weights[ix] += 1.0 / batch_size as f64;
        }
        Some(())
    })
}

/// Shared discrete-time loop. `sample` fills the per-token weights for a
/// step (returning None means full-batch population weights).
fn descent_loop<F>(
    w0: &Weights,
    emb: &EmbeddingSet,
    task: &TaskSpec,
    cfg: &DynamicsConfig,
    mut sample: F,
) -> Result<TrajectoryRecord>
where
    F: FnMut(usize, &mut Vec<f64>) -> Option<()>,
{
    cfg.validate()?;
    let total = cfg.t_end.round() as usize;
    let record_at = cfg.record_steps(total);
    let mut record_iter = record_at.iter().peekable();
    let mut rec = Recorder::new(emb, task, cfg);
    let mut w = w0.clone();
    let mut weights = vec![0.0; task.n()];

    'run: for step in 0..=total {
        if record_iter.peek() == Some(&&step) {
            record_iter.next();
            if !rec.snapshot(step as f64, &w)? {
                break 'run;
            }
        }
        if step == total {
            break;
        }
        let eta = cfg.eta.at(step);
        let g = match sample(step, &mut weights) {
            None => model::grad(&w, emb, task)?,
            Some(()) => model::grad_weighted(&w, emb, task, &weights)?,
        };
        w.0 -= eta * g.0;
        if !w.is_finite() {
            rec.diverged = true;
            break;
        }
    }
    Ok(rec.finish(w))
}

/// Gradient flow `dW = -grad L(W) dt`, integrated with an adaptive embedded
/// Runge-Kutta 4(5) pair.
pub fn gf_run(
    w0: &Weights,
    emb: &EmbeddingSet,
    task: &TaskSpec,
    cfg: &DynamicsConfig,
) -> Result<TrajectoryRecord> {
    if cfg.kind != DynamicsKind::GradientFlow {
        return Err(CoreError::InvalidArgument("config kind is not GF".into()));
    }
    cfg.validate()?;
    let d = emb.d();
    let y0 = DVector::from_column_slice(w0.0.as_slice());
    let times = cfg.record_times();
    let opts = OdeOptions {
        rtol: cfg.rtol,
        atol: cfg.atol,
        ..OdeOptions::default()
    };
    let rhs = |_t: f64, y: &DVector<f64>| {
        let w = Weights(DMatrix::from_column_slice(d, d, y.as_slice()));
        let g = model::grad(&w, emb, task).expect("shapes fixed during integration");
        DVector::from_column_slice((-g.0).as_slice())
    };
    let sol = integrate(rhs, 0.0, y0, &times, &opts)?;
    let mut rec = Recorder::new(emb, task, cfg);
    let mut final_w = w0.clone();
    for (t, y) in &sol {
        let w = Weights(DMatrix::from_column_slice(d, d, y.as_slice()));
        if !rec.snapshot(*t, &w)? {
            break;
        }
        final_w = w;
    }
    Ok(rec.finish(final_w))
}

/// Stochastic gradient flow via Euler-Maruyama with fixed step `h`:
/// `W <- W - h grad L + sigma_t sqrt(h) G`, with the Gaussian perturbation
/// projected onto the span of the gradient updates so the orthogonal
/// component of `W_0` is preserved exactly, as in the other dynamics.
pub fn sgf_run(
    w0: &Weights,
    emb: &EmbeddingSet,
    task: &TaskSpec,
    cfg: &DynamicsConfig,
) -> Result<TrajectoryRecord> {
    if cfg.kind != DynamicsKind::StochasticGradientFlow {
        return Err(CoreError::InvalidArgument("config kind is not SGF".into()));
    }
    cfg.validate()?;
    let h = cfg.step;
    let total = (cfg.t_end / h).round() as usize;
    let (p_left, p_right) = update_span_projectors(emb);
    let mut rng = derive_rng(cfg.seed, &[0x5f]);
    let d = emb.d();

    let times = cfg.record_times();
    let mut record_iter = times.iter().peekable();
    let mut rec = Recorder::new(emb, task, cfg);
    let mut w = w0.clone();

    'run: for step in 0..=total {
        let t = step as f64 * h;
        while let Some(&&rt) = record_iter.peek() {
            if rt <= t + h * 0.5 {
                record_iter.next();
                if !rec.snapshot(t, &w)? {
                    break 'run;
                }
            } else {
                break;
            }
        }
        if step == total {
            break;
        }
        let g = model::grad(&w, emb, task)?;
        let sigma = cfg.sigma.at(step);
        w.0 -= h * g.0;
        if sigma != 0.0 {
            let noise = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            w.0 += sigma * h.sqrt() * (&p_left * noise * &p_right);
        }
        if !w.is_finite() {
            rec.diverged = true;
            break;
        }
    }
    Ok(rec.finish(w))
}

/// Orthogonal projectors onto the left factor span{u_j - u_k} and the right
/// factor span{e_x} of the gradient-update space.
pub fn update_span_projectors(emb: &EmbeddingSet) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = emb.d();
    let m = emb.m();
    // Columns u_j - u_0 span the same space as all pairwise differences.
    let mut diffs = DMatrix::zeros(d, m.saturating_sub(1));
    for j in 1..m {
        let col = emb.u_row(j) - emb.u_row(0);
        diffs.set_column(j - 1, &col);
    }
    let p_left = projector_of_columns(&diffs);
    let p_right = projector_of_columns(&emb.e().transpose());
    (p_left, p_right)
}

fn projector_of_columns(cols: &DMatrix<f64>) -> DMatrix<f64> {
    let d = cols.nrows();
    if cols.ncols() == 0 {
        return DMatrix::zeros(d, d);
    }
    let svd = cols.clone().svd(true, false);
    let u = svd.u.expect("svd with u requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = smax * 1e-12 * d as f64;
    let mut p = DMatrix::zeros(d, d);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            let col = u.column(i);
            p += col * col.transpose();
        }
    }
    p
}
