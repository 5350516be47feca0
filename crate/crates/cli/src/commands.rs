//! One function per subcommand: assemble the problem, run the core
//! pipeline, re-verify the result independently, and write artifacts.

use std::path::{Path, PathBuf};

use serde::Serialize;
use subrig_core::constraints::{
    max_horizontality_violation, periodic_gap, registration_stationarity_residual,
};
use subrig_core::dissipation::{dissipation_timeseries, DissipationParams};
use subrig_core::geometry::{MotionPath, Polyline, RigidMotion};
use subrig_core::problems::{
    compare_serpenoid_vs_geodesic, gait_summary, hierarchical_solve, make_displacement,
    make_fixed, make_periodic, serpenoid_shape, InitMode, ProblemSpec,
};
use subrig_core::solver::{
    estimate_convergence_order, horizontal_lift, refine_time, SolveError, SolveReport,
};

use crate::config::{self, PresetSection, RunConfig};
use crate::io;
use crate::{fd, CliError};

const DEFAULT_OUT: &str = "out";

#[derive(Serialize)]
struct Tool {
    name: &'static str,
    version: &'static str,
}

fn tool() -> Tool {
    Tool {
        name: "subrig",
        version: env!("CARGO_PKG_VERSION"),
    }
}

#[derive(Serialize)]
struct Verification {
    /// Largest residual found by the independent post-solve check.
    constraint_violation: f64,
    tolerance: f64,
    pass: bool,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: Tool,
    command: &'a str,
    config: &'a RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    threads: Option<usize>,
    converged: bool,
    reports: &'a [SolveReport],
    #[serde(skip_serializing_if = "Option::is_none")]
    verification: Option<Verification>,
    #[serde(skip_serializing_if = "Option::is_none")]
    order: Option<f64>,
}

pub struct Ctx {
    pub out_override: Option<PathBuf>,
    pub quiet: bool,
    pub threads: Option<usize>,
}

impl Ctx {
    fn out_dir(&self, cfg: &RunConfig) -> PathBuf {
        self.out_override
            .clone()
            .unwrap_or_else(|| PathBuf::from(cfg.output_dir.as_deref().unwrap_or(DEFAULT_OUT)))
    }

    fn say(&self, line: &str) {
        if !self.quiet {
            println!("{line}");
        }
    }
}

/// What the independent post-solve verification must look at, beyond the
/// momentum rows every regime shares.
enum VerifyPlan {
    Fixed {
        iso: Option<Vec<usize>>,
    },
    Displacement {
        motion: RigidMotion,
        iso: Option<Vec<usize>>,
    },
    Periodic {
        motion: RigidMotion,
        iso: Option<Vec<usize>>,
        min_length: f64,
    },
}

fn edge_lengths(frame: &Polyline) -> Result<Vec<f64>, CliError> {
    Ok(frame.edge_data().map_err(CliError::config_from)?.lengths)
}

/// Re-derives every constraint residual from the returned path alone, with
/// none of the solver's bookkeeping.
fn reverify(
    path: &MotionPath,
    params: &DissipationParams,
    plan: &VerifyPlan,
) -> Result<f64, CliError> {
    let mut worst =
        max_horizontality_violation(path, &params.outer).map_err(CliError::config_from)?;
    let iso = match plan {
        VerifyPlan::Fixed { iso } => iso,
        VerifyPlan::Displacement { motion, iso } => {
            let rows = registration_stationarity_residual(
                path.frame(0),
                path.frame(path.intervals()),
                motion,
            )
            .map_err(CliError::config_from)?;
            for r in rows {
                worst = worst.max(r.abs());
            }
            iso
        }
        VerifyPlan::Periodic {
            motion,
            iso,
            min_length,
        } => {
            let gap = periodic_gap(path, motion).map_err(CliError::config_from)?;
            worst = worst.max(gap.amax());
            for len in edge_lengths(path.frame(0))? {
                worst = worst.max(min_length - len);
            }
            iso
        }
    };
    if let Some(edges) = iso {
        let base = edge_lengths(path.frame(0))?;
        for k in 1..=path.intervals() {
            let lens = edge_lengths(path.frame(k))?;
            for &e in edges {
                worst = worst.max((lens[e] - base[e]).abs());
            }
        }
    }
    Ok(worst)
}

/// Assembles the problem a config describes, together with its
/// verification plan.
fn build_problem(cfg: &RunConfig) -> Result<(ProblemSpec, VerifyPlan), CliError> {
    let resolved = config::resolve_start(cfg)?;
    let start = resolved.shape;
    let edges = start.num_edges();
    let params = config::build_params(cfg, edges)?;
    let iso = config::resolve_isometry(cfg, &resolved.preset_isometry, edges)?;
    let problem = config::require_problem(cfg)?;
    let k = cfg.discretization.intervals;
    let init = config::build_init_mode(cfg);

    let (mut spec, plan) = match problem.regime.as_str() {
        "fixed" => {
            if problem.lift_endpoints {
                let (spec, plan) = lifted_fixed_problem(cfg, &start, &params, iso.clone())?;
                (spec, plan)
            } else {
                let end = fixed_end_shape(cfg, &start)?;
                if end.dim() != start.dim() || end.num_vertices() != start.num_vertices() {
                    return Err(CliError::config(
                        "start and end shapes must share dimension and vertex count",
                    ));
                }
                let mut spec = make_fixed(start, end, k, params);
                spec.init = init;
                (spec, VerifyPlan::Fixed { iso: iso.clone() })
            }
        }
        "displacement" => {
            let section = problem
                .motion
                .as_ref()
                .ok_or_else(|| CliError::config("displacement regime needs problem.motion"))?;
            let motion = config::build_motion(section, start.dim())?;
            let mut spec = make_displacement(start, motion.clone(), k, params);
            spec.init = init;
            (
                spec,
                VerifyPlan::Displacement {
                    motion,
                    iso: iso.clone(),
                },
            )
        }
        "periodic" => {
            let section = problem
                .motion
                .as_ref()
                .ok_or_else(|| CliError::config("periodic regime needs problem.motion"))?;
            let motion = config::build_motion(section, start.dim())?;
            let lengths = edge_lengths(&start)?;
            let mean = lengths.iter().sum::<f64>() / lengths.len() as f64;
            let min_length = cfg.solver.min_length_factor * mean;
            let mut spec = make_periodic(start, motion.clone(), k, params);
            spec.min_length_factor = cfg.solver.min_length_factor;
            spec.anchor = cfg.solver.anchor;
            spec.init = init;
            (
                spec,
                VerifyPlan::Periodic {
                    motion,
                    iso: iso.clone(),
                    min_length,
                },
            )
        }
        other => {
            return Err(CliError::config(format!(
                "problem.regime must be fixed, displacement, or periodic; got \"{other}\""
            )));
        }
    };
    spec.isometry_edges = iso;
    Ok((spec, plan))
}

fn fixed_end_shape(cfg: &RunConfig, start: &Polyline) -> Result<Polyline, CliError> {
    let problem = config::require_problem(cfg)?;
    if let Some(rows) = &problem.end {
        return config::parse_shape(rows, "problem.end");
    }
    if let Some(PresetSection::Serpenoid(p)) = &problem.preset {
        let end_phase = p.end_phase.ok_or_else(|| {
            CliError::config("fixed regime with a serpenoid preset needs end_phase")
        })?;
        return serpenoid_shape(
            p.amplitude,
            p.wavelength,
            end_phase,
            p.length,
            start.num_edges(),
        )
        .map_err(CliError::config_from);
    }
    Err(CliError::config("fixed regime needs problem.end"))
}

/// Fixed problem whose endpoints come from lifting a phase sweep of the
/// serpenoid preset; the lifted sweep doubles as the initial guess, so the
/// problem starts feasible.
fn lifted_fixed_problem(
    cfg: &RunConfig,
    start: &Polyline,
    params: &DissipationParams,
    iso: Option<Vec<usize>>,
) -> Result<(ProblemSpec, VerifyPlan), CliError> {
    let problem = config::require_problem(cfg)?;
    let p = match &problem.preset {
        Some(PresetSection::Serpenoid(p)) => p,
        _ => {
            return Err(CliError::config(
                "lift_endpoints needs a serpenoid preset",
            ))
        }
    };
    let end_phase = p
        .end_phase
        .ok_or_else(|| CliError::config("lift_endpoints needs end_phase"))?;
    let k = cfg.discretization.intervals;
    let edges = start.num_edges();
    let mut frames = Vec::with_capacity(k + 1);
    for j in 0..=k {
        let phase = p.phase + (end_phase - p.phase) * j as f64 / k as f64;
        frames.push(
            serpenoid_shape(p.amplitude, p.wavelength, phase, p.length, edges)
                .map_err(CliError::config_from)?,
        );
    }
    let shapes = MotionPath::new(frames).map_err(CliError::config_from)?;
    let lifted = horizontal_lift(&shapes, &RigidMotion::identity(start.dim()), &params.outer)
        .map_err(map_solve_err)?;
    let mut spec = make_fixed(
        lifted.frame(0).clone(),
        lifted.frame(k).clone(),
        k,
        params.clone(),
    );
    spec.init = InitMode::Path(lifted);
    Ok((spec, VerifyPlan::Fixed { iso }))
}

pub fn map_solve_err(e: SolveError) -> CliError {
    match e {
        SolveError::NonConvergence { .. }
        | SolveError::LiftDiverged { .. }
        | SolveError::Stalled(_)
        | SolveError::Linear(_) => CliError::nonconverged(e.to_string()),
        other => CliError::config(other.to_string()),
    }
}

fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: &RunConfig,
    ctx: &Ctx,
    converged: bool,
    reports: &[SolveReport],
    verification: Option<Verification>,
    order: Option<f64>,
) -> Result<(), CliError> {
    let manifest = Manifest {
        tool: tool(),
        command,
        config: cfg,
        threads: ctx.threads,
        converged,
        reports,
        verification,
        order,
    };
    io::write_json(&dir.join("manifest.json"), &manifest)
}

fn write_path_artifacts(
    dir: &Path,
    path: &MotionPath,
    params: &DissipationParams,
) -> Result<(), CliError> {
    io::write_atomic(&dir.join("trajectory.csv"), &io::trajectory_csv(path))?;
    let series = dissipation_timeseries(path, params).map_err(CliError::config_from)?;
    io::write_atomic(&dir.join("dissipation.csv"), &io::dissipation_csv(&series))?;
    let summary = gait_summary(path).map_err(CliError::config_from)?;
    io::write_json(&dir.join("gait_summary.json"), &summary)
}

pub fn cmd_solve(
    ctx: &Ctx,
    config_path: &Path,
    seed: Option<u64>,
    levels: Option<usize>,
) -> Result<(), CliError> {
    let mut cfg = config::load(config_path)?;
    if let Some(s) = seed {
        cfg.solver.seed = s;
    }
    if let Some(l) = levels {
        cfg.discretization.levels = l;
    }
    let out = ctx.out_dir(&cfg);
    cfg.output_dir = Some(out.display().to_string());

    let (spec, plan) = build_problem(&cfg)?;
    let params = spec.params.clone();
    let opts = config::build_solve_options(&cfg);

    match hierarchical_solve(&spec, &opts) {
        Ok((path, reports)) => {
            let violation = reverify(&path, &params, &plan)?;
            let pass = violation <= opts.tol_constraint;
            for (i, r) in reports.iter().enumerate() {
                ctx.say(&format!(
                    "level {i}: intervals={} energy={:.6e} violation={:.3e} iterations={} converged={}",
                    path.intervals() >> (reports.len() - 1 - i),
                    r.energy,
                    r.constraint_violation,
                    r.iterations,
                    r.converged
                ));
            }
            ctx.say(&format!(
                "verified violation {violation:.3e} (tolerance {:.1e}); artifacts in {}",
                opts.tol_constraint,
                out.display()
            ));
            write_path_artifacts(&out, &path, &params)?;
            write_manifest(
                &out,
                "solve",
                &cfg,
                ctx,
                true,
                &reports,
                Some(Verification {
                    constraint_violation: violation,
                    tolerance: opts.tol_constraint,
                    pass,
                }),
                None,
            )?;
            if pass {
                Ok(())
            } else {
                Err(CliError::nonconverged(format!(
                    "independent verification found violation {violation:.3e} above tolerance"
                )))
            }
        }
        Err(SolveError::NonConvergence { report, best }) => {
            let violation = reverify(&best, &params, &plan)?;
            write_path_artifacts(&out, &best, &params)?;
            write_manifest(
                &out,
                "solve",
                &cfg,
                ctx,
                false,
                std::slice::from_ref(&report),
                Some(Verification {
                    constraint_violation: violation,
                    tolerance: opts.tol_constraint,
                    pass: false,
                }),
                None,
            )?;
            Err(CliError::nonconverged(format!(
                "stopped after {} iterations with violation {:.3e} and optimality {:.3e}; best iterate written to {}",
                report.iterations,
                report.constraint_violation,
                report.optimality,
                out.display()
            )))
        }
        Err(e) => Err(map_solve_err(e)),
    }
}

pub fn cmd_lift(ctx: &Ctx, config_path: &Path, shapes_path: &Path) -> Result<(), CliError> {
    let mut cfg = config::load(config_path)?;
    let out = ctx.out_dir(&cfg);
    cfg.output_dir = Some(out.display().to_string());

    let shapes = io::read_trajectory(shapes_path)?;
    let params = config::build_params(&cfg, shapes.num_vertices() - 1)?;
    let lifted = horizontal_lift(
        &shapes,
        &RigidMotion::identity(shapes.dim()),
        &params.outer,
    )
    .map_err(map_solve_err)?;
    let violation =
        max_horizontality_violation(&lifted, &params.outer).map_err(CliError::config_from)?;
    let pass = violation <= cfg.solver.tol_constraint;
    write_path_artifacts(&out, &lifted, &params)?;
    write_manifest(
        &out,
        "lift",
        &cfg,
        ctx,
        pass,
        &[],
        Some(Verification {
            constraint_violation: violation,
            tolerance: cfg.solver.tol_constraint,
            pass,
        }),
        None,
    )?;
    ctx.say(&format!(
        "lifted {} frames, violation {violation:.3e}; artifacts in {}",
        lifted.intervals() + 1,
        out.display()
    ));
    if pass {
        Ok(())
    } else {
        Err(CliError::nonconverged(format!(
            "lift violation {violation:.3e} above tolerance"
        )))
    }
}

pub fn cmd_check_grad(
    ctx: &Ctx,
    config_path: Option<&Path>,
    seed: Option<u64>,
    tol: Option<f64>,
) -> Result<(), CliError> {
    let cfg = match config_path {
        Some(p) => Some(config::load(p)?),
        None => None,
    };
    let seed = seed
        .or_else(|| cfg.as_ref().map(|c| c.solver.seed))
        .unwrap_or(7);
    let tol = tol.unwrap_or(1e-5);
    if !(tol.is_finite() && tol > 0.0) {
        return Err(CliError::config("--tol must be finite and positive"));
    }
    let report = fd::run_check(seed, 20, tol);
    for inst in &report.instances {
        ctx.say(&format!(
            "instance {:2}: d={} n={} k={} grad={:.3e} hess={:.3e} jac={:.3e}",
            inst.instance,
            inst.dim,
            inst.vertices,
            inst.intervals,
            inst.grad_err,
            inst.hess_err,
            inst.jac_err
        ));
    }
    println!(
        "seed={} instances={} max_grad={:.3e} (tol {:.1e}) max_hess={:.3e} (tol {:.1e}) max_jac={:.3e} (tol {:.1e}) -> {}",
        report.seed,
        report.instances.len(),
        report.max_grad_err,
        report.tol_grad,
        report.max_hess_err,
        report.tol_hess,
        report.max_jac_err,
        report.tol_jac,
        if report.pass { "pass" } else { "fail" }
    );
    let out = ctx
        .out_override
        .clone()
        .or_else(|| cfg.as_ref().and_then(|c| c.output_dir.clone().map(PathBuf::from)));
    if let Some(dir) = out {
        io::write_json(&dir.join("check_grad.json"), &report)?;
    }
    if report.pass {
        Ok(())
    } else if tol < 1e-8 {
        Err(CliError::nonconverged(format!(
            "tolerance {tol:.1e} sits below the central-difference noise floor (about 1e-9 \
             relative); the analytic derivatives cannot be distinguished that finely"
        )))
    } else {
        Err(CliError::nonconverged(
            "derivative check failed; see the per-instance table",
        ))
    }
}

pub fn cmd_refine_study(
    ctx: &Ctx,
    config_path: &Path,
    levels: Option<usize>,
) -> Result<(), CliError> {
    let mut cfg = config::load(config_path)?;
    if let Some(l) = levels {
        cfg.discretization.levels = l;
    }
    let out = ctx.out_dir(&cfg);
    cfg.output_dir = Some(out.display().to_string());
    let levels = cfg.discretization.levels;

    let (spec0, plan) = build_problem(&cfg)?;
    let params = spec0.params.clone();
    let mut opts = config::build_solve_options(&cfg);
    opts.refinement_levels = 1;

    let mut rows: Vec<(usize, f64)> = Vec::new();
    let mut reports: Vec<SolveReport> = Vec::new();
    let mut spec = spec0;
    let mut k = spec.intervals;
    let mut finest: Option<MotionPath> = None;
    let mut failure: Option<(SolveReport, MotionPath)> = None;
    for level in 0..levels {
        if level > 0 {
            let refined = refine_time(finest.as_ref().unwrap()).map_err(map_solve_err)?;
            k *= 2;
            spec.intervals = k;
            spec.init = InitMode::Path(refined);
        }
        match hierarchical_solve(&spec, &opts) {
            Ok((path, mut level_reports)) => {
                let report = level_reports.pop().expect("one report per level");
                rows.push((k, report.energy));
                ctx.say(&format!(
                    "intervals={k} energy={:.10e} iterations={}",
                    report.energy, report.iterations
                ));
                reports.push(report);
                finest = Some(path);
            }
            Err(SolveError::NonConvergence { report, best }) => {
                failure = Some((report.clone(), *best));
                reports.push(report);
                break;
            }
            Err(e) => return Err(map_solve_err(e)),
        }
    }

    io::write_atomic(&out.join("refine_study.csv"), &io::refine_csv(&rows))?;
    let order = if rows.len() >= 3 {
        let ks: Vec<usize> = rows[..rows.len() - 1].iter().map(|r| r.0).collect();
        let es: Vec<f64> = rows[..rows.len() - 1].iter().map(|r| r.1).collect();
        let slope = estimate_convergence_order(&ks, &es, rows[rows.len() - 1].1);
        if slope.is_nan() {
            None
        } else {
            Some(slope)
        }
    } else {
        None
    };
    match order {
        Some(o) => ctx.say(&format!("estimated order {o:.3}")),
        None => ctx.say("estimated order n/a (needs at least three levels)"),
    }

    if let Some((report, best)) = failure {
        write_path_artifacts(&out, &best, &params)?;
        write_manifest(&out, "refine-study", &cfg, ctx, false, &reports, None, order)?;
        return Err(CliError::nonconverged(format!(
            "level with {} intervals stopped at violation {:.3e}; partial table written to {}",
            k,
            report.constraint_violation,
            out.display()
        )));
    }
    let path = finest.expect("at least one level ran");
    let violation = reverify(&path, &params, &plan)?;
    write_path_artifacts(&out, &path, &params)?;
    write_manifest(
        &out,
        "refine-study",
        &cfg,
        ctx,
        true,
        &reports,
        Some(Verification {
            constraint_violation: violation,
            tolerance: opts.tol_constraint,
            pass: violation <= opts.tol_constraint,
        }),
        order,
    )?;
    Ok(())
}

#[derive(Serialize)]
struct ComparisonDoc {
    reference_energy: f64,
    optimized_energy: f64,
    ratio: f64,
}

pub fn cmd_compare_serpenoid(ctx: &Ctx, config_path: &Path) -> Result<(), CliError> {
    let mut cfg = config::load(config_path)?;
    let out = ctx.out_dir(&cfg);
    cfg.output_dir = Some(out.display().to_string());

    let problem = config::require_problem(&cfg)?;
    let p = match &problem.preset {
        Some(PresetSection::Serpenoid(p)) => p.clone(),
        _ => {
            return Err(CliError::config(
                "compare-serpenoid needs a serpenoid preset",
            ))
        }
    };
    let n = cfg
        .discretization
        .vertices
        .ok_or_else(|| CliError::config("serpenoid preset needs discretization.vertices"))?;
    if n < 3 {
        return Err(CliError::config("discretization.vertices must be at least 3"));
    }
    let edges = n - 1;
    let k = cfg.discretization.intervals;
    let params = config::build_params(&cfg, edges)?;
    let opts = config::build_solve_options(&cfg);

    match compare_serpenoid_vs_geodesic(
        p.amplitude,
        p.wavelength,
        p.length,
        edges,
        k,
        &params,
        &opts,
    ) {
        Ok(cmp) => {
            io::write_atomic(
                &out.join("reference_trajectory.csv"),
                &io::trajectory_csv(&cmp.reference_path),
            )?;
            io::write_atomic(
                &out.join("optimized_trajectory.csv"),
                &io::trajectory_csv(&cmp.optimized_path),
            )?;
            io::write_atomic(
                &out.join("reference_dissipation.csv"),
                &io::dissipation_csv(&cmp.reference_series),
            )?;
            io::write_atomic(
                &out.join("optimized_dissipation.csv"),
                &io::dissipation_csv(&cmp.optimized_series),
            )?;
            io::write_json(
                &out.join("comparison.json"),
                &ComparisonDoc {
                    reference_energy: cmp.reference_energy,
                    optimized_energy: cmp.optimized_energy,
                    ratio: cmp.ratio,
                },
            )?;
            let violation = max_horizontality_violation(&cmp.optimized_path, &params.outer)
                .map_err(CliError::config_from)?;
            write_manifest(
                &out,
                "compare-serpenoid",
                &cfg,
                ctx,
                true,
                std::slice::from_ref(&cmp.report),
                Some(Verification {
                    constraint_violation: violation,
                    tolerance: opts.tol_constraint,
                    pass: violation <= opts.tol_constraint,
                }),
                None,
            )?;
            ctx.say(&format!(
                "reference energy {:.6e}, optimized energy {:.6e}, ratio {:.6}",
                cmp.reference_energy, cmp.optimized_energy, cmp.ratio
            ));
            Ok(())
        }
        Err(SolveError::NonConvergence { report, best }) => {
            io::write_atomic(
                &out.join("optimized_trajectory.csv"),
                &io::trajectory_csv(&best),
            )?;
            write_manifest(
                &out,
                "compare-serpenoid",
                &cfg,
                ctx,
                false,
                std::slice::from_ref(&report),
                None,
                None,
            )?;
            Err(CliError::nonconverged(format!(
                "optimization stopped at violation {:.3e}; best iterate written to {}",
                report.constraint_violation,
                out.display()
            )))
        }
        Err(e) => Err(map_solve_err(e)),
    }
}

pub fn cmd_preset_list() {
    println!("purcell      three straight links along the first axis; parameters: arm_length, middle_length, rigid_arms (true pins every edge length, false only the middle one)");
    println!("serpenoid    traveling-wave curve with sinusoidal turning angles; parameters: amplitude, wavelength, length, phase (default 0), optional end_phase for fixed problems");
}
