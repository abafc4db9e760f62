//! Experiment configuration: a single TOML file (or a JSON manifest from a
//! previous run) resolved into core types. Unknown keys are rejected.

use crate::error::{CliError, Result};
use amdyn_core::analysis::{GammaBasis, GridSpec, PhaseAxis, PhaseSpec};
use amdyn_core::dynamics::{DynamicsConfig, DynamicsKind, RecordCadence, Schedule};
use amdyn_core::rng::derive_rng;
use amdyn_core::{EmbeddingSet, TaskSpec};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<EmbeddingSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<DynamicsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landscape: Option<LandscapeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<PhaseSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_form: Option<ClosedFormSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSpec {
    /// "orthonormal" | "correlated-pair" | "sphere"
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    /// Input correlation for "correlated-pair".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Sampling seed for "sphere".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Optional uniform scaling of all input embeddings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_scale: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    /// "zipf" | "uniform" | "pair", or omitted for explicit f_star/p.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Frequency of the first token for the "pair" preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_star: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    /// "gd" | "gf" | "sgd" | "sgf"
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Per-step learning-rate table (overrides `eta`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_table: Option<Vec<f64>>,
    /// Step count for gd/sgd, continuous horizon for gf/sgf.
    pub t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_every: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_log_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_times: Option<Vec<f64>>,
    /// "canonical" | "theory"
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_gamma: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_sharpness: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma1_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma2_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub with_sharpness: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contour_levels: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSection {
    pub etas: Vec<f64>,
    /// "alpha" | "log-ratio"
    pub axis: String,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClosedFormSection {
    /// Per-token constant of the binary orthogonal margin equation.
    pub c: f64,
    #[serde(default)]
    pub m0: f64,
    pub t_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    /// Optional two-token system: frequency of the first token…
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p1: Option<f64>,
    /// …and input correlation; both present -> gamma flow is also emitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    /// Load from TOML, or from a JSON manifest of a previous run (the
    /// manifest echoes the resolved config, so it can be re-fed directly).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        let trimmed = text.trim_start();
        if trimmed.starts_with('{') {
            // JSON: accept either a bare config or a full manifest.
            if let Ok(cfg) = serde_json::from_str::<ExperimentConfig>(&text) {
                return Ok(cfg);
            }
            let manifest: crate::output::Manifest = serde_json::from_str(&text)
                .map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
            return Ok(manifest.config);
        }
        toml::from_str(&text).map_err(|e| cfg_err(format!("{}: {e}", path.display())))
    }

    pub fn embeddings(&self) -> Result<EmbeddingSet> {
        let spec = self
            .embeddings
            .as_ref()
            .ok_or_else(|| cfg_err("missing [embeddings] section"))?;
        let need = |v: Option<usize>, key: &str| {
            v.ok_or_else(|| cfg_err(format!("[embeddings] kind \"{}\" needs `{key}`", spec.kind)))
        };
        let emb = match spec.kind.as_str() {
            "orthonormal" => EmbeddingSet::orthonormal(
                need(spec.n, "n")?,
                need(spec.m, "m")?,
                need(spec.d, "d")?,
            )?,
            "correlated-pair" => {
                let alpha = spec
                    .alpha
                    .ok_or_else(|| cfg_err("[embeddings] correlated-pair needs `alpha`"))?;
                EmbeddingSet::correlated_pair(alpha, spec.d.unwrap_or(2))?
            }
            "sphere" => {
                let seed = spec
                    .seed
                    .ok_or_else(|| cfg_err("[embeddings] sphere needs `seed`"))?;
                let mut rng = derive_rng(seed, &[0x77]);
                EmbeddingSet::sphere(
                    need(spec.n, "n")?,
                    need(spec.m, "m")?,
                    need(spec.d, "d")?,
                    seed,
                    &mut rng,
                )?
            }
            other => return Err(cfg_err(format!("unknown embeddings kind \"{other}\""))),
        };
        Ok(match spec.input_scale {
            Some(s) if s > 0.0 => emb.scale_inputs(s),
            Some(s) => return Err(cfg_err(format!("input_scale must be positive, got {s}"))),
            None => emb,
        })
    }

    pub fn task(&self, emb: &EmbeddingSet) -> Result<TaskSpec> {
        let section = self
            .task
            .as_ref()
            .ok_or_else(|| cfg_err("missing [task] section"))?;
        match section.preset.as_deref() {
            Some("zipf") => Ok(TaskSpec::zipf_identity(emb.n())?),
            Some("uniform") => Ok(TaskSpec::uniform_identity(emb.n())?),
            Some("pair") => {
                let p1 = section
                    .p1
                    .ok_or_else(|| cfg_err("[task] preset \"pair\" needs `p1`"))?;
                Ok(TaskSpec::pair(p1)?)
            }
            Some(other) => Err(cfg_err(format!("unknown task preset \"{other}\""))),
            None => {
                let f_star = section
                    .f_star
                    .clone()
                    .ok_or_else(|| cfg_err("[task] needs `preset` or explicit `f_star`/`p`"))?;
                let p = section
                    .p
                    .clone()
                    .ok_or_else(|| cfg_err("[task] explicit form needs `p`"))?;
                Ok(TaskSpec::new(f_star, p, emb.m())?)
            }
        }
    }

    pub fn dynamics(&self, seed: u64) -> Result<DynamicsConfig> {
        let section = self
            .dynamics
            .as_ref()
            .ok_or_else(|| cfg_err("missing [dynamics] section"))?;
        let kind = match section.kind.as_str() {
            "gd" => DynamicsKind::GradientDescent,
            "gf" => DynamicsKind::GradientFlow,
            "sgd" => DynamicsKind::StochasticGradientDescent,
            "sgf" => DynamicsKind::StochasticGradientFlow,
            other => return Err(cfg_err(format!("unknown dynamics kind \"{other}\""))),
        };
        let mut cfg = DynamicsConfig::new(kind, section.eta.unwrap_or(1.0), section.t_end);
        if let Some(table) = &section.eta_table {
            cfg.eta = Schedule::Table(table.clone());
        }
        cfg.seed = seed;
        if let Some(b) = section.batch_size {
            cfg.batch_size = b;
        }
        if let Some(s) = section.sigma {
            cfg.sigma = Schedule::Constant(s);
        }
        if let Some(s) = section.step {
            cfg.step = s;
        }
        if let Some(v) = section.rtol {
            cfg.rtol = v;
        }
        if let Some(v) = section.atol {
            cfg.atol = v;
        }
        let cadences = [
            section.record_every.is_some(),
            section.record_log_points.is_some(),
            section.record_times.is_some(),
        ]
        .iter()
        .filter(|&&b| b)
        .count();
        if cadences > 1 {
            return Err(cfg_err(
                "[dynamics] record_every, record_log_points and record_times are mutually exclusive",
            ));
        }
        if let Some(dt) = section.record_every {
            cfg.cadence = RecordCadence::Every(dt);
        } else if let Some(n) = section.record_log_points {
            cfg.cadence = RecordCadence::LogSpaced(n);
        } else if let Some(times) = &section.record_times {
            cfg.cadence = RecordCadence::Times(times.clone());
        }
        cfg.record_gamma = match section.record_gamma.as_deref() {
            None => None,
            Some("canonical") => Some(GammaBasis::Canonical),
            Some("theory") => Some(GammaBasis::Theory),
            Some(other) => {
                return Err(cfg_err(format!("unknown record_gamma basis \"{other}\"")))
            }
        };
        if let Some(s) = section.record_sharpness {
            cfg.record_sharpness = s;
        }
        Ok(cfg)
    }

    pub fn grid_spec(&self) -> GridSpec {
        let mut spec = GridSpec::default();
        if let Some(section) = &self.landscape {
            if let Some(r) = section.gamma1_range {
                spec.gamma1_range = (r[0], r[1]);
            }
            if let Some(r) = section.gamma2_range {
                spec.gamma2_range = (r[0], r[1]);
            }
            if let Some(r) = section.resolution {
                spec.resolution = (r[0], r[1]);
            }
        }
        spec
    }

    pub fn phase_spec(&self) -> Result<PhaseSpec> {
        let section = self
            .phase
            .as_ref()
            .ok_or_else(|| cfg_err("missing [phase] section"))?;
        let axis = match section.axis.as_str() {
            "alpha" => PhaseAxis::Alpha {
                values: section.values.clone(),
                p1: section
                    .p1
                    .ok_or_else(|| cfg_err("[phase] axis \"alpha\" needs `p1`"))?,
            },
            "log-ratio" => PhaseAxis::LogRatio {
                values: section.values.clone(),
                alpha: section
                    .alpha
                    .ok_or_else(|| cfg_err("[phase] axis \"log-ratio\" needs `alpha`"))?,
            },
            other => return Err(cfg_err(format!("unknown phase axis \"{other}\""))),
        };
        if section.etas.is_empty() || section.values.is_empty() {
            return Err(cfg_err("[phase] etas and values must be non-empty"));
        }
        Ok(PhaseSpec {
            etas: section.etas.clone(),
            axis,
            cap: section.cap.unwrap_or(1_000_000),
        })
    }
}
