//! Subcommand implementations: each loads a config, runs the core
//! routines, and writes CSV + SVG artifacts plus a JSON manifest.

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::output::{atomic_write, resolve_output_dir, Manifest};
use crate::svg::{self, AxisScale, Series};
use amdyn_core::analysis::{self, LandscapeGrid, StepsOutcome};
use amdyn_core::closed_form::{self, BinaryOrthogonalInstance, TwoTokenInstance};
use amdyn_core::dynamics::{self, DynamicsKind, TrajectoryRecord};
use amdyn_core::ode::OdeOptions;
use amdyn_core::verify::{self, VerifyOptions};
use amdyn_core::Weights;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub struct Context {
    pub seed_flag: Option<u64>,
    pub output_flag: Option<PathBuf>,
}

impl Context {
    fn seed(&self, cfg: &ExperimentConfig) -> u64 {
        self.seed_flag.or(cfg.seed).unwrap_or(0)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        resolve_output_dir(self.output_flag.as_deref(), Some(cfg)).join(&cfg.id)
    }
}

fn finish(
    dir: &Path,
    seed: u64,
    started: Instant,
    mut cfg: ExperimentConfig,
) -> Result<()> {
    // Pin the resolved seed so the manifest reproduces the run exactly.
    cfg.seed = Some(seed);
    Manifest::new(seed, started.elapsed().as_millis() as u64, cfg)
        .write(&dir.join("manifest.json"))?;
    println!("wrote {}", dir.display());
    Ok(())
}

/// `simulate <config>`: run the configured dynamics and write the
/// trajectory CSV plus loss/margin plots.
pub fn simulate(ctx: &Context, cfg_path: &Path) -> Result<()> {
    let started = Instant::now();
    let cfg = ExperimentConfig::load(cfg_path)?;
    let seed = ctx.seed(&cfg);
    let emb = cfg.embeddings()?;
    let task = cfg.task(&emb)?;
    let dyn_cfg = cfg.dynamics(seed)?;
    let w0 = Weights::zeros(emb.d());
    let record = match dyn_cfg.kind {
        DynamicsKind::GradientDescent => dynamics::gd_run(&w0, &emb, &task, &dyn_cfg)?,
        DynamicsKind::GradientFlow => dynamics::gf_run(&w0, &emb, &task, &dyn_cfg)?,
        DynamicsKind::StochasticGradientDescent => {
            dynamics::sgd_run(&w0, &emb, &task, &dyn_cfg)?
        }
        DynamicsKind::StochasticGradientFlow => dynamics::sgf_run(&w0, &emb, &task, &dyn_cfg)?,
    };
    let dir = ctx.out_dir(&cfg);
    atomic_write(&dir.join("trajectory.csv"), &record.to_csv())?;
    write_trajectory_plots(&dir, &record)?;
    if record.diverged {
        eprintln!("note: trajectory diverged; recording stopped early");
    }
    finish(&dir, seed, started, cfg)
}

fn write_trajectory_plots(dir: &Path, record: &TrajectoryRecord) -> Result<()> {
    let positive_t = record.times.iter().all(|&t| t > 0.0)
        || record.times.iter().filter(|&&t| t > 0.0).count() >= 2;
    let x_scale = if positive_t && span_ratio(&record.times) > 100.0 {
        AxisScale::Log10
    } else {
        AxisScale::Linear
    };
    let y_scale = if record.loss.iter().all(|&l| l > 0.0) {
        AxisScale::Log10
    } else {
        AxisScale::Linear
    };
    let loss_series = [Series {
        label: "loss",
        points: record
            .times
            .iter()
            .zip(&record.loss)
            .map(|(&t, &l)| (t, l))
            .collect(),
    }];
    atomic_write(
        &dir.join("loss.svg"),
        &svg::line_plot("training loss", "t", "loss", &loss_series, x_scale, y_scale),
    )?;
    let n = record.margins.first().map_or(0, |m| m.len());
    let labels: Vec<String> = (1..=n).map(|i| format!("margin {i}")).collect();
    let margin_series: Vec<Series> = (0..n)
        .map(|i| Series {
            label: &labels[i],
            points: record
                .times
                .iter()
                .zip(&record.margins)
                .map(|(&t, m)| (t, m[i]))
                .collect(),
        })
        .collect();
    atomic_write(
        &dir.join("margins.svg"),
        &svg::line_plot(
            "per-token gap margins",
            "t",
            "margin",
            &margin_series,
            x_scale,
            AxisScale::Linear,
        ),
    )?;
    Ok(())
}

fn span_ratio(times: &[f64]) -> f64 {
    let lo = times.iter().copied().filter(|&t| t > 0.0).fold(f64::INFINITY, f64::min);
    let hi = times.iter().copied().fold(0.0, f64::max);
    if lo.is_finite() && lo > 0.0 {
        hi / lo
    } else {
        1.0
    }
}

/// `landscape <config>`: rasterize the loss / 0-1 loss (and optionally
/// sharpness) over the gamma plane.
pub fn landscape(ctx: &Context, cfg_path: &Path) -> Result<()> {
    let started = Instant::now();
    let cfg = ExperimentConfig::load(cfg_path)?;
    let seed = ctx.seed(&cfg);
    let emb = cfg.embeddings()?;
    let task = cfg.task(&emb)?;
    let spec = cfg.grid_spec();
    let section = cfg.landscape.clone().unwrap_or_default();
    let with_sharpness = section.with_sharpness.unwrap_or(false);
    let grid = analysis::landscape(&emb, &task, &spec, with_sharpness)?;
    let dir = ctx.out_dir(&cfg);
    atomic_write(&dir.join("loss.csv"), &grid.to_csv(&grid.loss))?;
    atomic_write(&dir.join("zero_one.csv"), &grid.to_csv(&grid.zero_one))?;
    let levels = section
        .contour_levels
        .clone()
        .unwrap_or_else(|| default_levels(&grid.loss));
    atomic_write(
        &dir.join("loss.svg"),
        &landscape_svg("loss landscape", &grid, &grid.loss, &levels, &[]),
    )?;
    atomic_write(
        &dir.join("zero_one.svg"),
        &landscape_svg("0-1 loss", &grid, &grid.zero_one, &[], &[]),
    )?;
    if let Some(sharp) = &grid.sharpness {
        atomic_write(&dir.join("sharpness.csv"), &grid.to_csv(sharp))?;
        atomic_write(
            &dir.join("sharpness.svg"),
            &landscape_svg("sharpness", &grid, sharp, &[], &[]),
        )?;
    }
    finish(&dir, seed, started, cfg)
}

pub fn default_levels(values: &[f64]) -> Vec<f64> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in values {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !(lo < hi) {
        return Vec::new();
    }
    (1..=6).map(|i| lo + (hi - lo) * i as f64 / 7.0).collect()
}

pub fn landscape_svg(
    title: &str,
    grid: &LandscapeGrid,
    values: &[f64],
    levels: &[f64],
    trajectories: &[Series],
) -> String {
    svg::heatmap(
        title,
        "gamma1",
        "gamma2",
        &grid.gamma1,
        &grid.gamma2,
        values,
        false,
        levels,
        trajectories,
    )
}

/// `phase <config>`: steps-to-accuracy over a learning-rate grid.
pub fn phase(ctx: &Context, cfg_path: &Path) -> Result<()> {
    let started = Instant::now();
    let cfg = ExperimentConfig::load(cfg_path)?;
    let seed = ctx.seed(&cfg);
    let spec = cfg.phase_spec()?;
    let diagram = analysis::phase_diagram(&spec)?;
    let dir = ctx.out_dir(&cfg);
    atomic_write(&dir.join("phase.csv"), &diagram.to_csv())?;
    atomic_write(&dir.join("phase.svg"), &phase_svg("steps to accuracy", &diagram))?;
    finish(&dir, seed, started, cfg)
}

pub fn phase_svg(title: &str, diagram: &analysis::PhaseDiagram) -> String {
    let values: Vec<f64> = diagram
        .cells
        .iter()
        .map(|c| match c {
            StepsOutcome::Diverged => diagram.cap as f64,
            other => other.as_f64(),
        })
        .collect();
    svg::heatmap(
        title,
        "eta",
        "axis2",
        &diagram.etas,
        &diagram.axis2,
        &values,
        true,
        &[],
        &[],
    )
}

/// `closed-form <config>`: tabulate the closed-form margin curve and,
/// when a two-token system is configured, the gamma flow.
pub fn closed_form_cmd(ctx: &Context, cfg_path: &Path) -> Result<()> {
    let started = Instant::now();
    let cfg = ExperimentConfig::load(cfg_path)?;
    let seed = ctx.seed(&cfg);
    let section = cfg
        .closed_form
        .clone()
        .ok_or_else(|| CliError::Config("missing [closed_form] section".into()))?;
    if !(section.t_max > 0.0) {
        return Err(CliError::Config(format!(
            "[closed_form] t_max must be positive, got {}",
            section.t_max
        )));
    }
    let points = section.points.unwrap_or(200).max(2);
    let inst = BinaryOrthogonalInstance::new(section.c, section.m0)?;
    // Log-spaced samples plus the origin.
    let t_lo = (section.t_max * 1e-6).max(1e-9);
    let mut times = vec![0.0];
    for i in 0..points {
        let f = i as f64 / (points - 1) as f64;
        times.push(t_lo * (section.t_max / t_lo).powf(f));
    }
    let mut csv = String::from("t,margin\n");
    let mut pts = Vec::new();
    for &t in &times {
        let m = closed_form::binary_margin_closed(&inst, t)?;
        csv.push_str(&format!(
            "{},{}\n",
            dynamics::fmt_float(t),
            dynamics::fmt_float(m)
        ));
        pts.push((t, m));
    }
    let dir = ctx.out_dir(&cfg);
    atomic_write(&dir.join("margin.csv"), &csv)?;
    atomic_write(
        &dir.join("margin.svg"),
        &svg::line_plot(
            "closed-form margin",
            "t",
            "margin",
            &[Series {
                label: "margin(t)",
                points: pts,
            }],
            AxisScale::Log10,
            AxisScale::Linear,
        ),
    )?;
    if let (Some(p1), Some(alpha)) = (section.p1, section.alpha) {
        let two = TwoTokenInstance::new(p1, alpha, section.c)?;
        let flow = closed_form::gamma_flow(&two, &times[1..], &OdeOptions::default())?;
        let mut csv = String::from("t,gamma1,gamma2\n");
        let mut g1 = Vec::new();
        let mut g2 = Vec::new();
        for &(t, (a, b)) in &flow {
            csv.push_str(&format!(
                "{},{},{}\n",
                dynamics::fmt_float(t),
                dynamics::fmt_float(a),
                dynamics::fmt_float(b)
            ));
            g1.push((t, a));
            g2.push((t, b));
        }
        atomic_write(&dir.join("gamma_flow.csv"), &csv)?;
        atomic_write(
            &dir.join("gamma_flow.svg"),
            &svg::line_plot(
                "two-token gamma flow",
                "t",
                "gamma",
                &[
                    Series {
                        label: "gamma1",
                        points: g1,
                    },
                    Series {
                        label: "gamma2",
                        points: g2,
                    },
                ],
                AxisScale::Log10,
                AxisScale::Linear,
            ),
        )?;
    }
    finish(&dir, seed, started, cfg)
}

/// `verify [--strict]`: run the property suite and print one line per
/// property with its timing.
pub fn verify_cmd(ctx: &Context, strict: bool) -> Result<()> {
    let mut opts = VerifyOptions::default();
    opts.strict = strict;
    if let Some(seed) = ctx.seed_flag {
        opts.seed = seed;
    }
    let report = verify::run(&opts);
    for r in &report.results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        println!(
            "{status}  {name:<44} error {err:9.3e}  tol {tol:9.3e}  {ms:8.1} ms",
            name = r.name,
            err = r.error,
            tol = r.tolerance,
            ms = r.millis
        );
        if !r.passed && !r.detail.is_empty() {
            println!("      {}", r.detail);
        }
    }
    let n_pass = report.results.iter().filter(|r| r.passed).count();
    println!("{n_pass}/{} properties passed", report.results.len());
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Property(format!(
            "{} of {} verification properties failed",
            report.results.len() - n_pass,
            report.results.len()
        )))
    }
}
