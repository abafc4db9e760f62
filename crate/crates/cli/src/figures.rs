//! Built-in figure reproductions. Each entry renders one figure's
//! artifacts (CSV + SVG) into its own directory and runs a self-check
//! that fails the command when a qualitative property does not hold.

use crate::commands::{default_levels, landscape_svg, phase_svg};
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::output::{atomic_write, Manifest};
use crate::svg::{self, AxisScale, Series};
use amdyn_core::analysis::{
    self, GammaBasis, GridSpec, PhaseAxis, PhaseSpec, StepsOutcome,
};
use amdyn_core::dynamics::{self, fmt_float, DynamicsConfig, TrajectoryRecord};
use amdyn_core::rng::derive_rng;
use amdyn_core::{EmbeddingSet, TaskSpec, Weights};
use std::f64::consts::LN_2;
use std::path::Path;
use std::time::Instant;

pub struct Figure {
    pub id: &'static str,
    pub description: &'static str,
    /// Resolution of the emitted artifacts relative to full quality
    /// (1.0 = full): grid side length or step-budget fraction.
    pub scale_factor: f64,
    run: fn(&Path, u64) -> Result<()>,
}

pub fn registry() -> &'static [Figure] {
    &[
        Figure {
            id: "fig1",
            description: "Loss landscape of a two-token system with negative input \
                          correlation: interference creates a bounded optimal region.",
            scale_factor: 0.4,
            run: fig1,
        },
        Figure {
            id: "fig2",
            description: "Loss spike at large learning rate: landscape with GD \
                          trajectories at eta = 1 and eta = 10, plus loss curves.",
            scale_factor: 0.4,
            run: fig2,
        },
        Figure {
            id: "fig3",
            description: "Underparameterized regime: a random 3-token instance in \
                          dimension 2 with strictly positive excess 0-1 risk.",
            scale_factor: 0.4,
            run: fig3,
        },
        Figure {
            id: "fig4",
            description: "Phase diagrams of steps-to-perfect-accuracy over learning \
                          rate vs input correlation, and vs class imbalance.",
            scale_factor: 0.1,
            run: fig4,
        },
        Figure {
            id: "fig5",
            description: "Sharpness landscape with GD trajectories, sharpness decay \
                          along gradient flow, and oscillation at the edge of stability.",
            scale_factor: 0.12,
            run: fig5,
        },
        Figure {
            id: "fig6",
            description: "Forgetting under limited capacity: per-token margins over \
                          training for d = 3, 5, 64 with 5 tokens.",
            scale_factor: 1.0,
            run: fig6,
        },
    ]
}

pub fn run(id: &str, out_root: &Path, seed: u64) -> Result<()> {
    let fig = registry()
        .iter()
        .find(|f| f.id == id)
        .ok_or_else(|| {
            let ids: Vec<&str> = registry().iter().map(|f| f.id).collect();
            CliError::Config(format!(
                "unknown figure \"{id}\"; available: {}",
                ids.join(", ")
            ))
        })?;
    let started = Instant::now();
    let dir = out_root.join(fig.id);
    (fig.run)(&dir, seed)?;
    let cfg = ExperimentConfig {
        id: fig.id.to_string(),
        seed: Some(seed),
        output_dir: None,
        embeddings: None,
        task: None,
        dynamics: None,
        landscape: None,
        phase: None,
        closed_form: None,
    };
    Manifest::new(seed, started.elapsed().as_millis() as u64, cfg)
        .write(&dir.join("manifest.json"))?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn check(ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Property(format!("figure self-check failed: {msg}")))
    }
}

fn two_token(alpha: f64, p1: f64) -> Result<(EmbeddingSet, TaskSpec)> {
    Ok((
        EmbeddingSet::correlated_pair(alpha, 2)?,
        TaskSpec::pair(p1)?,
    ))
}

fn gd_gamma_trace(
    emb: &EmbeddingSet,
    task: &TaskSpec,
    eta: f64,
    steps: usize,
) -> Result<TrajectoryRecord> {
    let mut cfg = DynamicsConfig::gd(eta, steps);
    cfg.record_gamma = Some(GammaBasis::Canonical);
    Ok(dynamics::gd_run(&Weights::zeros(emb.d()), emb, task, &cfg)?)
}

fn gamma_points(record: &TrajectoryRecord) -> Vec<(f64, f64)> {
    record.gamma.as_ref().map(|g| g.clone()).unwrap_or_default()
}

fn fig1(dir: &Path, _seed: u64) -> Result<()> {
    let (emb, task) = two_token(-0.5, 0.75)?;
    let spec = GridSpec {
        gamma1_range: (-10.0, 10.0),
        gamma2_range: (-10.0, 10.0),
        resolution: (201, 201),
    };
    let grid = analysis::landscape(&emb, &task, &spec, false)?;
    let traj = gd_gamma_trace(&emb, &task, 0.5, 400)?;
    atomic_write(&dir.join("loss.csv"), &grid.to_csv(&grid.loss))?;
    atomic_write(&dir.join("zero_one.csv"), &grid.to_csv(&grid.zero_one))?;
    let overlay = [Series {
        label: "GD, eta = 0.5",
        points: gamma_points(&traj),
    }];
    atomic_write(
        &dir.join("fig1.svg"),
        &landscape_svg(
            "interference landscape (alpha = -0.5, p1 = 0.75)",
            &grid,
            &grid.loss,
            &default_levels(&grid.loss),
            &overlay,
        ),
    )?;
    // Self-checks: training still succeeds (an optimal region exists) and
    // interference keeps the minimum loss strictly above what independent
    // tokens would allow (but below the trivial ln 2 plateau).
    let n_zero = grid.zero_one.iter().filter(|&&z| z == 0.0).count();
    check(n_zero > 10, "no optimal (zero 0-1 loss) region on the grid")?;
    let min_loss = grid.loss.iter().cloned().fold(f64::INFINITY, f64::min);
    check(min_loss < LN_2, "minimum grid loss is not below ln 2")?;
    check(
        !traj.diverged && *traj.zero_one.last().unwrap() == 0.0,
        "GD did not reach perfect accuracy",
    )
}

fn fig2(dir: &Path, _seed: u64) -> Result<()> {
    let (emb, task) = two_token(0.95, 0.75)?;
    let spec = GridSpec {
        gamma1_range: (-4.0, 8.0),
        gamma2_range: (-2.0, 14.0),
        resolution: (201, 201),
    };
    let grid = analysis::landscape(&emb, &task, &spec, false)?;
    let steps = 35;
    let slow = gd_gamma_trace(&emb, &task, 1.0, steps)?;
    let fast = gd_gamma_trace(&emb, &task, 10.0, steps)?;
    atomic_write(&dir.join("loss.csv"), &grid.to_csv(&grid.loss))?;
    atomic_write(&dir.join("trajectory_eta1.csv"), &slow.to_csv())?;
    atomic_write(&dir.join("trajectory_eta10.csv"), &fast.to_csv())?;
    let overlay = [
        Series {
            label: "GD, eta = 1",
            points: gamma_points(&slow),
        },
        Series {
            label: "GD, eta = 10",
            points: gamma_points(&fast),
        },
    ];
    atomic_write(
        &dir.join("fig2.svg"),
        &landscape_svg(
            "loss-spike landscape (alpha = 0.95, p1 = 0.75)",
            &grid,
            &grid.loss,
            &default_levels(&grid.loss),
            &overlay,
        ),
    )?;
    let loss_curve = |r: &TrajectoryRecord| -> Vec<(f64, f64)> {
        r.times.iter().zip(&r.loss).map(|(&t, &l)| (t, l)).collect()
    };
    atomic_write(
        &dir.join("fig2_loss.svg"),
        &svg::line_plot(
            "loss spike at large learning rate",
            "step",
            "loss",
            &[
                Series {
                    label: "eta = 1",
                    points: loss_curve(&slow),
                },
                Series {
                    label: "eta = 10",
                    points: loss_curve(&fast),
                },
            ],
            AxisScale::Linear,
            AxisScale::Linear,
        ),
    )?;
    // Self-checks: the large learning rate spikes above the ln 2 starting
    // loss within the first few steps; the small one never does.
    let spike = fast.loss[1..6.min(fast.loss.len())]
        .iter()
        .any(|&l| l > LN_2 + 1e-9);
    check(spike, "eta = 10 loss does not spike above ln 2 in steps 1..5")?;
    let calm = slow.loss[1..].iter().all(|&l| l < LN_2);
    check(calm, "eta = 1 loss exceeds ln 2 after step 0")
}

fn fig3(dir: &Path, _seed: u64) -> Result<()> {
    // Pinned witness instance: 3 tokens, d = M = 2, not linearly separable.
    let (emb, task) = analysis::random_underparam_instance(293)?;
    let risk = analysis::excess_risk(&emb, &task)?;
    let spec = GridSpec {
        gamma1_range: (-8.0, 8.0),
        gamma2_range: (-8.0, 8.0),
        resolution: (201, 201),
    };
    let grid = analysis::landscape(&emb, &task, &spec, false)?;
    atomic_write(&dir.join("loss.csv"), &grid.to_csv(&grid.loss))?;
    atomic_write(&dir.join("zero_one.csv"), &grid.to_csv(&grid.zero_one))?;
    let mut csv = String::from(
        "excess_risk,separable,minimizer_gamma1,minimizer_gamma2,l01_at_min,min_l01\n",
    );
    csv.push_str(&format!(
        "{},{},{},{},{},{}\n",
        fmt_float(risk.value),
        risk.separable,
        fmt_float(risk.minimizer.0),
        fmt_float(risk.minimizer.1),
        fmt_float(risk.l01_at_min),
        fmt_float(risk.min_l01),
    ));
    atomic_write(&dir.join("excess_risk.csv"), &csv)?;
    atomic_write(
        &dir.join("fig3.svg"),
        &landscape_svg(
            "underparameterized landscape (3 tokens, d = 2)",
            &grid,
            &grid.loss,
            &default_levels(&grid.loss),
            &[],
        ),
    )?;
    atomic_write(
        &dir.join("fig3_zero_one.svg"),
        &landscape_svg(
            "0-1 loss (3 tokens, d = 2)",
            &grid,
            &grid.zero_one,
            &[],
            &[],
        ),
    )?;
    check(!risk.separable, "witness instance is unexpectedly separable")?;
    check(
        risk.value > 0.0,
        "witness instance has zero excess 0-1 risk",
    )
}

fn fig4(dir: &Path, _seed: u64) -> Result<()> {
    let etas: Vec<f64> = (-3..=5).map(|e| 2f64.powi(e)).collect();
    let alpha_spec = PhaseSpec {
        etas: etas.clone(),
        axis: PhaseAxis::Alpha {
            values: vec![-0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 0.9, 0.95],
            p1: 0.75,
        },
        cap: 100_000,
    };
    let ratio_spec = PhaseSpec {
        etas,
        axis: PhaseAxis::LogRatio {
            values: vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
            alpha: 0.5,
        },
        cap: 100_000,
    };
    let alpha_diag = analysis::phase_diagram(&alpha_spec)?;
    let ratio_diag = analysis::phase_diagram(&ratio_spec)?;
    atomic_write(&dir.join("phase_alpha.csv"), &alpha_diag.to_csv())?;
    atomic_write(&dir.join("phase_log_ratio.csv"), &ratio_diag.to_csv())?;
    atomic_write(
        &dir.join("fig4_alpha.svg"),
        &phase_svg("steps to accuracy: eta vs alpha (p1 = 0.75)", &alpha_diag),
    )?;
    atomic_write(
        &dir.join("fig4_log_ratio.svg"),
        &phase_svg(
            "steps to accuracy: eta vs log(p1/p2) (alpha = 0.5)",
            &ratio_diag,
        ),
    )?;
    // Self-check: without positive correlation a single step suffices at
    // every learning rate.
    for (i2, &a) in alpha_diag.axis2.iter().enumerate() {
        if a <= 0.0 {
            for i1 in 0..alpha_diag.etas.len() {
                check(
                    alpha_diag.cell(i1, i2) == StepsOutcome::Steps(1),
                    "an alpha <= 0 cell needs more than one step",
                )?;
            }
        }
    }
    Ok(())
}

fn fig5(dir: &Path, _seed: u64) -> Result<()> {
    let (emb, task) = two_token(0.5, 0.75)?;
    let spec = GridSpec {
        gamma1_range: (-4.0, 6.0),
        gamma2_range: (-2.0, 8.0),
        resolution: (61, 61),
    };
    let grid = analysis::landscape(&emb, &task, &spec, true)?;
    let sharp_grid = grid.sharpness.as_ref().expect("requested sharpness");
    atomic_write(&dir.join("sharpness.csv"), &grid.to_csv(sharp_grid))?;
    let steps = 200;
    let slow = gd_gamma_trace(&emb, &task, 1.0, steps)?;
    let fast = gd_gamma_trace(&emb, &task, 10.0, steps)?;
    let overlay = [
        Series {
            label: "GD, eta = 1",
            points: gamma_points(&slow),
        },
        Series {
            label: "GD, eta = 10",
            points: gamma_points(&fast),
        },
    ];
    atomic_write(
        &dir.join("fig5.svg"),
        &landscape_svg(
            "sharpness landscape (alpha = 0.5, p1 = 0.75)",
            &grid,
            sharp_grid,
            &default_levels(sharp_grid),
            &overlay,
        ),
    )?;
    // Sharpness along gradient flow and along the two GD runs.
    let mut gf_cfg = DynamicsConfig::gf(1e3);
    gf_cfg.record_sharpness = true;
    gf_cfg.cadence = dynamics::RecordCadence::LogSpaced(40);
    let flow = dynamics::gf_run(&Weights::zeros(emb.d()), &emb, &task, &gf_cfg)?;
    let mut gd_cfg = DynamicsConfig::gd(10.0, steps);
    gd_cfg.record_sharpness = true;
    let gd_sharp = dynamics::gd_run(&Weights::zeros(emb.d()), &emb, &task, &gd_cfg)?;
    let sharp_curve = |r: &TrajectoryRecord| -> Vec<(f64, f64)> {
        r.times
            .iter()
            .zip(r.sharpness.as_ref().unwrap())
            .map(|(&t, &s)| (t, s))
            .collect()
    };
    atomic_write(&dir.join("trajectory_gf.csv"), &flow.to_csv())?;
    atomic_write(&dir.join("trajectory_gd_eta10.csv"), &gd_sharp.to_csv())?;
    atomic_write(
        &dir.join("fig5_sharpness.svg"),
        &svg::line_plot(
            "sharpness along training",
            "t",
            "sharpness",
            &[
                Series {
                    label: "gradient flow",
                    points: sharp_curve(&flow),
                },
                Series {
                    label: "GD, eta = 10",
                    points: sharp_curve(&gd_sharp),
                },
            ],
            AxisScale::Log10,
            AxisScale::Log10,
        ),
    )?;
    let gf_sharp = flow.sharpness.as_ref().unwrap();
    check(
        *gf_sharp.last().unwrap() < gf_sharp[0],
        "sharpness does not decay along gradient flow",
    )?;
    check(!slow.diverged && !fast.diverged, "a GD trajectory diverged")
}

fn fig6(dir: &Path, seed: u64) -> Result<()> {
    let n = 5;
    let task = TaskSpec::zipf_identity(n)?;
    let mut any_forgotten_d3 = false;
    let mut all_stored = [false; 2];
    for (k, d) in [3usize, 5, 64].into_iter().enumerate() {
        let mut rng = derive_rng(seed, &[0x77]);
        let emb = EmbeddingSet::sphere(n, n, d, seed, &mut rng)?;
        let mut cfg = DynamicsConfig::gd(0.1, 10_000);
        cfg.cadence = dynamics::RecordCadence::LogSpaced(200);
        let record = dynamics::gd_run(&Weights::zeros(d), &emb, &task, &cfg)?;
        atomic_write(&dir.join(format!("trajectory_d{d}.csv")), &record.to_csv())?;
        let labels: Vec<String> = (1..=n).map(|i| format!("token {i}")).collect();
        let series: Vec<Series> = (0..n)
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
            &dir.join(format!("fig6_d{d}.svg")),
            &svg::line_plot(
                &format!("per-token margins, d = {d} (5 tokens, Zipf)"),
                "step",
                "margin",
                &series,
                AxisScale::Log10,
                AxisScale::Linear,
            ),
        )?;
        let final_margins = record.margins.last().unwrap();
        if d == 3 {
            any_forgotten_d3 = final_margins.iter().any(|&m| m < 0.0);
        } else {
            all_stored[k - 1] = final_margins.iter().all(|&m| m > 0.0);
        }
    }
    check(
        any_forgotten_d3,
        "d = 3 run stores all tokens (no forgetting)",
    )?;
    check(
        all_stored[0] && all_stored[1],
        "a d >= 5 run fails to store every token",
    )
}
