//! Run configuration: schema, validation, and assembly into core problem
//! objects. Unknown keys are rejected everywhere so a typo cannot silently
//! fall back to a default.

use serde::{Deserialize, Serialize};
use subrig_core::dissipation::{DissipationParams, InnerParams, OuterParams};
use subrig_core::geometry::{Polyline, RigidMotion};
use subrig_core::problems::{
    purcell_swimmer, serpenoid_shape, thickness_profile_to_weights, InitMode,
};
use subrig_core::solver::SolveOptions;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemSection>,
    pub discretization: Discretization,
    pub dissipation: DissipationSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    /// One of `fixed`, `displacement`, `periodic`.
    pub regime: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<PresetSection>,
    /// Explicit start shape, one row of coordinates per vertex.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<Vec<f64>>>,
    /// Explicit end shape (fixed regime only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<Vec<Vec<f64>>>,
    /// Net rigid displacement (displacement and periodic regimes).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion: Option<MotionSection>,
    /// Fixed regime with a serpenoid preset only: sweep the phase from
    /// `phase` to `end_phase` over the time grid, lift the sweep, and use
    /// the lifted frames as endpoints and initial guess. Guarantees a
    /// feasible, momentum-consistent starting point.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub lift_endpoints: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetSection {
    Purcell(PurcellPreset),
    Serpenoid(SerpenoidPreset),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PurcellPreset {
    pub arm_length: f64,
    pub middle_length: f64,
    pub rigid_arms: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SerpenoidPreset {
    pub amplitude: f64,
    pub wavelength: f64,
    pub length: f64,
    #[serde(default)]
    pub phase: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_phase: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionSection {
    /// Planar rotation angle (two dimensions).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle: Option<f64>,
    /// Rotation vector (three dimensions).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<[f64; 3]>,
    pub translation: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Discretization {
    /// Time intervals at the coarsest level.
    pub intervals: usize,
    /// Interval-doubling levels; one means a single solve.
    #[serde(default = "default_levels")]
    pub levels: usize,
    /// Vertex count, required when the shape comes from a serpenoid preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertices: Option<usize>,
}

fn default_levels() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DissipationSection {
    /// Uniform drag anisotropy in (0, 1]; one is isotropic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// Per-edge anisotropy override.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_per_edge: Option<Vec<f64>>,
    /// Per-edge drag weights; mutually exclusive with `thickness`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Per-edge thickness profile, normalized to unit-mean drag weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thickness: Option<Vec<f64>>,
    #[serde(default)]
    pub sigma_bend: f64,
    #[serde(default)]
    pub sigma_strain: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_tol_constraint")]
    pub tol_constraint: f64,
    #[serde(default = "default_tol_optimality")]
    pub tol_optimality: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Edges pinned to their start-frame length. Defaults to the preset's
    /// own pin set when a preset provides one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub isometry_edges: Option<Vec<usize>>,
    /// Periodic regime: lower bound on frame-0 edge lengths as a fraction
    /// of their mean.
    #[serde(default = "default_min_length_factor")]
    pub min_length_factor: f64,
    /// Periodic regime: pin the frame-0 centroid.
    #[serde(default = "default_anchor")]
    pub anchor: bool,
    /// Initial guess policy: `default` or `relaxed`.
    #[serde(default = "default_init")]
    pub init: String,
}

fn default_tol_constraint() -> f64 {
    1e-8
}
fn default_tol_optimality() -> f64 {
    1e-6
}
fn default_max_iterations() -> usize {
    500
}
fn default_seed() -> u64 {
    7
}
fn default_min_length_factor() -> f64 {
    0.1
}
fn default_anchor() -> bool {
    true
}
fn default_init() -> String {
    "default".into()
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            tol_constraint: default_tol_constraint(),
            tol_optimality: default_tol_optimality(),
            max_iterations: default_max_iterations(),
            seed: default_seed(),
            isometry_edges: None,
            min_length_factor: default_min_length_factor(),
            anchor: default_anchor(),
            init: default_init(),
        }
    }
}

pub fn load(path: &std::path::Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.discretization.intervals == 0 {
        return Err(CliError::config("discretization.intervals must be positive"));
    }
    if cfg.discretization.levels == 0 {
        return Err(CliError::config("discretization.levels must be positive"));
    }
    let d = &cfg.dissipation;
    for (name, value) in [("sigma_bend", d.sigma_bend), ("sigma_strain", d.sigma_strain)] {
        if !value.is_finite() || value < 0.0 {
            return Err(CliError::config(format!(
                "dissipation.{name} must be finite and nonnegative"
            )));
        }
    }
    let eps_ok = |e: f64| e.is_finite() && e > 0.0 && e <= 1.0;
    if let Some(e) = d.eps {
        if !eps_ok(e) {
            return Err(CliError::config("dissipation.eps must lie in (0, 1]"));
        }
    }
    if let Some(v) = &d.eps_per_edge {
        if !v.iter().copied().all(eps_ok) {
            return Err(CliError::config(
                "dissipation.eps_per_edge entries must lie in (0, 1]",
            ));
        }
    }
    if d.eps.is_none() && d.eps_per_edge.is_none() {
        return Err(CliError::config(
            "dissipation needs eps or eps_per_edge",
        ));
    }
    if d.weights.is_some() && d.thickness.is_some() {
        return Err(CliError::config(
            "dissipation.weights and dissipation.thickness are mutually exclusive",
        ));
    }
    let s = &cfg.solver;
    if !(s.tol_constraint.is_finite() && s.tol_constraint > 0.0)
        || !(s.tol_optimality.is_finite() && s.tol_optimality > 0.0)
    {
        return Err(CliError::config("solver tolerances must be finite and positive"));
    }
    if s.init != "default" && s.init != "relaxed" {
        return Err(CliError::config(format!(
            "solver.init must be \"default\" or \"relaxed\", got \"{}\"",
            s.init
        )));
    }
    if !(s.min_length_factor.is_finite() && s.min_length_factor >= 0.0 && s.min_length_factor < 1.0)
    {
        return Err(CliError::config(
            "solver.min_length_factor must lie in [0, 1)",
        ));
    }
    Ok(())
}

/// The shape a problem starts from, plus any pin set the preset implies.
pub struct ResolvedStart {
    pub shape: Polyline,
    pub preset_isometry: Option<Vec<usize>>,
}

pub fn parse_shape(rows: &[Vec<f64>], what: &str) -> Result<Polyline, CliError> {
    if rows.is_empty() {
        return Err(CliError::config(format!("{what}: no vertices")));
    }
    let d = rows[0].len();
    if d != 2 && d != 3 {
        return Err(CliError::config(format!(
            "{what}: vertices must have 2 or 3 coordinates, got {d}"
        )));
    }
    let mut coords = Vec::with_capacity(rows.len() * d);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != d {
            return Err(CliError::config(format!(
                "{what}: vertex {i} has {} coordinates, expected {d}",
                row.len()
            )));
        }
        coords.extend_from_slice(row);
    }
    Polyline::new(d, coords).map_err(|e| CliError::config(format!("{what}: {e}")))
}

pub fn resolve_start(cfg: &RunConfig) -> Result<ResolvedStart, CliError> {
    let problem = require_problem(cfg)?;
    if let Some(rows) = &problem.start {
        if problem.preset.is_some() {
            return Err(CliError::config(
                "problem.start and problem.preset are mutually exclusive",
            ));
        }
        return Ok(ResolvedStart {
            shape: parse_shape(rows, "problem.start")?,
            preset_isometry: None,
        });
    }
    match &problem.preset {
        Some(PresetSection::Purcell(p)) => {
            let preset = purcell_swimmer(p.arm_length, p.middle_length, p.rigid_arms)
                .map_err(CliError::config_from)?;
            Ok(ResolvedStart {
                shape: preset.shape,
                preset_isometry: Some(preset.isometry_edges),
            })
        }
        Some(PresetSection::Serpenoid(p)) => {
            let n = cfg.discretization.vertices.ok_or_else(|| {
                CliError::config("serpenoid preset needs discretization.vertices")
            })?;
            if n < 2 {
                return Err(CliError::config("discretization.vertices must be at least 2"));
            }
            let shape = serpenoid_shape(p.amplitude, p.wavelength, p.phase, p.length, n - 1)
                .map_err(CliError::config_from)?;
            Ok(ResolvedStart {
                shape,
                preset_isometry: None,
            })
        }
        None => Err(CliError::config(
            "problem needs either a start shape or a preset",
        )),
    }
}

pub fn require_problem(cfg: &RunConfig) -> Result<&ProblemSection, CliError> {
    cfg.problem
        .as_ref()
        .ok_or_else(|| CliError::config("config has no problem section"))
}

pub fn build_motion(section: &MotionSection, dim: usize) -> Result<RigidMotion, CliError> {
    if section.translation.len() != dim {
        return Err(CliError::config(format!(
            "problem.motion.translation has {} entries, the shapes live in {dim} dimensions",
            section.translation.len()
        )));
    }
    match (dim, section.angle, section.rotation) {
        (2, angle, None) => {
            let t = [section.translation[0], section.translation[1]];
            Ok(RigidMotion::planar(angle.unwrap_or(0.0), t))
        }
        (3, None, rotation) => {
            let t = [
                section.translation[0],
                section.translation[1],
                section.translation[2],
            ];
            Ok(RigidMotion::spatial(rotation.unwrap_or([0.0; 3]), t))
        }
        (2, _, Some(_)) => Err(CliError::config(
            "problem.motion.rotation is for three dimensions; use angle",
        )),
        (3, Some(_), _) => Err(CliError::config(
            "problem.motion.angle is planar; use rotation",
        )),
        _ => unreachable!("shape dimensions are validated to 2 or 3"),
    }
}

pub fn build_params(cfg: &RunConfig, num_edges: usize) -> Result<DissipationParams, CliError> {
    let d = &cfg.dissipation;
    let eps: Vec<f64> = match &d.eps_per_edge {
        Some(v) => {
            if v.len() != num_edges {
                return Err(CliError::config(format!(
                    "dissipation.eps_per_edge has {} entries, the body has {num_edges} edges",
                    v.len()
                )));
            }
            v.clone()
        }
        None => vec![d.eps.expect("validated"); num_edges],
    };
    let weights: Vec<f64> = if let Some(t) = &d.thickness {
        if t.len() != num_edges {
            return Err(CliError::config(format!(
                "dissipation.thickness has {} entries, the body has {num_edges} edges",
                t.len()
            )));
        }
        thickness_profile_to_weights(t).map_err(CliError::config_from)?
    } else if let Some(w) = &d.weights {
        if w.len() != num_edges {
            return Err(CliError::config(format!(
                "dissipation.weights has {} entries, the body has {num_edges} edges",
                w.len()
            )));
        }
        w.clone()
    } else {
        vec![1.0; num_edges]
    };
    let outer = OuterParams::new(eps, weights).map_err(CliError::config_from)?;
    let inner = InnerParams::new(d.sigma_bend, d.sigma_strain).map_err(CliError::config_from)?;
    Ok(DissipationParams { outer, inner })
}

pub fn build_solve_options(cfg: &RunConfig) -> SolveOptions {
    SolveOptions {
        tol_constraint: cfg.solver.tol_constraint,
        tol_optimality: cfg.solver.tol_optimality,
        max_iterations: cfg.solver.max_iterations,
        refinement_levels: cfg.discretization.levels,
        seed: cfg.solver.seed,
    }
}

pub fn build_init_mode(cfg: &RunConfig) -> InitMode {
    match cfg.solver.init.as_str() {
        "relaxed" => InitMode::Relaxed,
        _ => InitMode::Default,
    }
}

/// Isometry pins: an explicit solver setting wins, else the preset's own
/// pin set applies.
pub fn resolve_isometry(
    cfg: &RunConfig,
    preset: &Option<Vec<usize>>,
    num_edges: usize,
) -> Result<Option<Vec<usize>>, CliError> {
    let chosen = cfg
        .solver
        .isometry_edges
        .clone()
        .or_else(|| preset.clone());
    if let Some(edges) = &chosen {
        for &e in edges {
            if e >= num_edges {
                return Err(CliError::config(format!(
                    "isometry edge {e} out of range, the body has {num_edges} edges"
                )));
            }
        }
    }
    Ok(chosen)
}
