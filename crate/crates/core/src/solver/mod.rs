//! Constrained minimization over motion paths.
//!
//! The entry points here pose a boundary-value problem over the frames of a
//! [`MotionPath`], minimize the dissipation subject to the requested
//! constraint rows, and hand back the optimal path with a solve report.
//! Also included: time refinement by interval halving, horizontal lifting
//! of a shape sequence into a momentum-free motion, and least-squares
//! estimation of convergence orders from refinement ladders.

pub mod linear;
mod nlp;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{displaced_midpoints, momentum_rows, momentum_window, ConstraintError};
use crate::dissipation::{
    dissipation_timeseries, DissipationError, DissipationParams, IntervalDissipation, OuterParams,
};
use crate::geometry::{GeometryError, MotionPath, Polyline, RigidMotion};
use crate::vecmath;

use nlp::{Failure, NlpConfig, PathNlp, Regime};

/// Stopping tolerances and iteration budget shared by all solves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Worst allowed constraint residual at the solution.
    pub tol_constraint: f64,
    /// Worst allowed stationarity residual at the solution.
    pub tol_optimality: f64,
    /// Total Newton iteration budget across both solve phases.
    pub max_iterations: usize,
    /// Interval-doubling levels used by refinement drivers.
    pub refinement_levels: usize,
    /// Seed for the deterministic perturbation fallback in initial guesses.
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol_constraint: 1e-8,
            tol_optimality: 1e-6,
            max_iterations: 500,
            refinement_levels: 3,
            seed: 7,
        }
    }
}

/// Outcome summary of one solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub energy: f64,
    /// Worst equality residual or bound violation at the returned path.
    pub constraint_violation: f64,
    /// Worst stationarity residual at the returned path.
    pub optimality: f64,
    /// Newton iterations spent in total.
    pub iterations: usize,
    /// Multiplier updates in the first solve phase.
    pub outer_iterations: usize,
    /// Newton iterations spent in the final polish phase.
    pub polish_iterations: usize,
    pub converged: bool,
    /// Per-interval dissipation records of the returned path; `energy` is
    /// half the grand total of the interval totals.
    pub dissipation: Vec<IntervalDissipation>,
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dissipation(#[from] DissipationError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error("linear solve failed: {0}")]
    Linear(#[from] linear::LinearError),
    #[error(
        "solver stopped short of tolerances (violation {:.3e}, optimality {:.3e})",
        report.constraint_violation,
        report.optimality
    )]
    NonConvergence {
        report: SolveReport,
        /// Best iterate reached; callers may still inspect or export it.
        best: Box<MotionPath>,
    },
    #[error("no regular initial path found: {0}")]
    DegenerateInit(String),
    #[error("horizontal lift stalled on interval {interval}")]
    LiftDiverged { interval: usize },
    #[error("solver stalled: {0}")]
    Stalled(String),
    #[error("{0}")]
    Invalid(String),
}

fn map_failure(f: Failure) -> SolveError {
    match f {
        Failure::Eval(e) => SolveError::Dissipation(e),
        Failure::Linear(e) => SolveError::Linear(e),
        Failure::Stalled(s) => SolveError::Stalled(s),
    }
}

/// Extra rows for periodic solves.
#[derive(Debug, Clone)]
pub struct PeriodicOptions {
    /// Edge indices whose lengths are pinned to their initial values on
    /// every frame; `None` leaves all lengths free.
    pub isometry_edges: Option<Vec<usize>>,
    /// Minimum allowed edge length on the base frame, as a fraction of the
    /// initial mean edge length; zero disables the bounds.
    pub min_length_factor: f64,
    /// Pin the base frame centroid at its initial position. This fixes the
    /// translational freedom left when the prescribed displacement is a
    /// pure translation.
    pub anchor: bool,
}

impl Default for PeriodicOptions {
    fn default() -> Self {
        Self {
            isometry_edges: None,
            min_length_factor: 0.1,
            anchor: true,
        }
    }
}

fn check_pair(start: &Polyline, end: &Polyline) -> Result<(), SolveError> {
    if start.dim() != end.dim() || start.num_vertices() != end.num_vertices() {
        return Err(SolveError::Invalid(
            "start and end frames must share dimension and vertex count".into(),
        ));
    }
    Ok(())
}

fn check_params(n: usize, params: &DissipationParams) -> Result<(), SolveError> {
    if params.outer.num_edges() != n - 1 {
        return Err(SolveError::Invalid(format!(
            "drag parameters sized for {} edges, curve has {}",
            params.outer.num_edges(),
            n - 1
        )));
    }
    Ok(())
}

fn check_init(init: &MotionPath, dim: usize, n: usize, k: usize) -> Result<(), SolveError> {
    if init.dim() != dim || init.num_vertices() != n || init.intervals() != k {
        return Err(SolveError::Invalid(
            "warm-start path does not match the problem layout".into(),
        ));
    }
    Ok(())
}

fn iso_rows(
    reference: &Polyline,
    edges: Option<&[usize]>,
) -> Result<(Vec<usize>, Vec<f64>), SolveError> {
    let Some(edges) = edges else {
        return Ok((Vec::new(), Vec::new()));
    };
    let data = reference.edge_data()?;
    let mut idx = Vec::with_capacity(edges.len());
    let mut targets = Vec::with_capacity(edges.len());
    for &e in edges {
        if e >= reference.num_edges() {
            return Err(SolveError::Invalid(format!(
                "length constraint on edge {e}, curve has {}",
                reference.num_edges()
            )));
        }
        idx.push(e);
        targets.push(data.lengths[e]);
    }
    Ok((idx, targets))
}

fn run_nlp(
    nlp: &PathNlp,
    init: &MotionPath,
    opts: &SolveOptions,
) -> Result<(MotionPath, SolveReport), SolveError> {
    let z0 = nlp.z_from_path_flat(init.to_flat().as_slice());
    let sol = nlp.solve(z0, opts).map_err(map_failure)?;
    let flat = nlp.full_flat(&sol.z);
    let path = MotionPath::from_flat_unchecked(nlp.dim, nlp.n, &flat);
    let series = dissipation_timeseries(&path, &nlp.params)?;
    let report = SolveReport {
        energy: sol.energy,
        constraint_violation: sol.feasibility,
        optimality: sol.optimality,
        iterations: sol.iterations,
        outer_iterations: sol.outer_iterations,
        polish_iterations: sol.polish_iterations,
        converged: sol.converged,
        dissipation: series,
    };
    if !sol.converged {
        return Err(SolveError::NonConvergence {
            report,
            best: Box::new(path),
        });
    }
    Ok((path, report))
}

/// Straight-line interpolation between two frames over `k` intervals.
///
/// If an interior frame degenerates (for instance between a shape and its
/// half-turn), interior frames are nudged by a deterministic seeded
/// perturbation of growing amplitude until all frames are regular.
pub fn init_linear(
    start: &Polyline,
    end: &Polyline,
    k: usize,
    seed: u64,
) -> Result<MotionPath, SolveError> {
    check_pair(start, end)?;
    if k < 1 {
        return Err(SolveError::Invalid("at least one interval required".into()));
    }
    let dim = start.dim();
    let scale = start.bbox_diameter().max(end.bbox_diameter()).max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 0..12 {
        let amp = if attempt == 0 {
            0.0
        } else {
            scale * 1e-6 * 10f64.powi(attempt)
        };
        let mut frames = Vec::with_capacity(k + 1);
        let mut ok = true;
        for j in 0..=k {
            let t = j as f64 / k as f64;
            let mut coords: Vec<f64> = start
                .coords()
                .iter()
                .zip(end.coords())
                .map(|(a, b)| (1.0 - t) * a + t * b)
                .collect();
            if amp > 0.0 && j > 0 && j < k {
                for c in &mut coords {
                    *c += amp * (rng.gen::<f64>() - 0.5);
                }
            }
            match Polyline::new(dim, coords) {
                Ok(f) if f.is_regular() => frames.push(f),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(MotionPath::new(frames)?);
        }
    }
    Err(SolveError::DegenerateInit(
        "interpolated frames stay degenerate under perturbation".into(),
    ))
}

/// Minimizes dissipation between two prescribed end frames with no side
/// constraints: the plain interpolation problem.
pub fn solve_interpolation(
    start: &Polyline,
    end: &Polyline,
    k: usize,
    params: &DissipationParams,
    init: Option<&MotionPath>,
    opts: &SolveOptions,
) -> Result<(MotionPath, SolveReport), SolveError> {
    check_pair(start, end)?;
    check_params(start.num_vertices(), params)?;
    let guess = match init {
        Some(p) => {
            check_init(p, start.dim(), start.num_vertices(), k)?;
            p.clone()
        }
        None => init_linear(start, end, k, opts.seed)?,
    };
    let nlp = PathNlp::new(
        start.dim(),
        start.num_vertices(),
        k,
        params.clone(),
        Regime::FixedEnds {
            x0: start.coords().to_vec(),
            xk: end.coords().to_vec(),
        },
        NlpConfig {
            momentum: false,
            iso_edges: Vec::new(),
            iso_targets: Vec::new(),
            anchor: None,
            min_len: None,
        },
    );
    run_nlp(&nlp, &guess, opts)
}

/// Minimizes dissipation between two prescribed end frames subject to the
/// per-interval momentum conditions (self-propelled motion), optionally
/// pinning selected edge lengths to their values on the start frame.
pub fn solve_fixed_bvp(
    start: &Polyline,
    end: &Polyline,
    k: usize,
    params: &DissipationParams,
    isometry_edges: Option<&[usize]>,
    init: Option<&MotionPath>,
    opts: &SolveOptions,
) -> Result<(MotionPath, SolveReport), SolveError> {
    check_pair(start, end)?;
    check_params(start.num_vertices(), params)?;
    let guess = match init {
        Some(p) => {
            check_init(p, start.dim(), start.num_vertices(), k)?;
            p.clone()
        }
        None => init_linear(start, end, k, opts.seed)?,
    };
    let (iso_edges, iso_targets) = iso_rows(start, isometry_edges)?;
    let nlp = PathNlp::new(
        start.dim(),
        start.num_vertices(),
        k,
        params.clone(),
        Regime::FixedEnds {
            x0: start.coords().to_vec(),
            xk: end.coords().to_vec(),
        },
        NlpConfig {
            momentum: true,
            iso_edges,
            iso_targets,
            anchor: None,
            min_len: None,
        },
    );
    run_nlp(&nlp, &guess, opts)
}

/// Momentum-constrained solve from a prescribed start frame to a free end
/// frame whose net rigid displacement is pinned: the end frame must admit
/// the displaced start curve as its stationary rigid registration.
pub fn solve_net_displacement(
    start: &Polyline,
    motion: &RigidMotion,
    k: usize,
    params: &DissipationParams,
    isometry_edges: Option<&[usize]>,
    init: Option<&MotionPath>,
    opts: &SolveOptions,
) -> Result<(MotionPath, SolveReport), SolveError> {
    if motion.dim() != start.dim() {
        return Err(SolveError::Invalid(
            "displacement dimension differs from curve dimension".into(),
        ));
    }
    check_params(start.num_vertices(), params)?;
    let displaced = motion.apply(start)?;
    let guess = match init {
        Some(p) => {
            check_init(p, start.dim(), start.num_vertices(), k)?;
            p.clone()
        }
        None => init_linear(start, &displaced, k, opts.seed)?,
    };
    let (iso_edges, iso_targets) = iso_rows(start, isometry_edges)?;
    let targets = displaced_midpoints(start, motion)?;
    let nlp = PathNlp::new(
        start.dim(),
        start.num_vertices(),
        k,
        params.clone(),
        Regime::Displacement {
            x0: start.coords().to_vec(),
            targets,
        },
        NlpConfig {
            momentum: true,
            iso_edges,
            iso_targets,
            anchor: None,
            min_len: None,
        },
    );
    run_nlp(&nlp, &guess, opts)
}

/// Momentum-constrained solve over one period: the frame after the last
/// interval is the first frame pushed through `motion`, and the base frame
/// itself is part of the unknowns.
///
/// The initial path supplies the interval count, the warm start, and the
/// reference geometry for the optional length rows, the centroid anchor,
/// and the minimum-length bounds that prevent the body from collapsing
/// toward zero size (which would send the dissipation to zero).
pub fn solve_periodic(
    init: &MotionPath,
    motion: &RigidMotion,
    params: &DissipationParams,
    periodic: &PeriodicOptions,
    opts: &SolveOptions,
) -> Result<(MotionPath, SolveReport), SolveError> {
    if motion.dim() != init.dim() {
        return Err(SolveError::Invalid(
            "displacement dimension differs from path dimension".into(),
        ));
    }
    check_params(init.num_vertices(), params)?;
    let base = init.frame(0);
    let (iso_edges, iso_targets) = iso_rows(base, periodic.isometry_edges.as_deref())?;
    let anchor = if periodic.anchor {
        Some(base.centroid()?)
    } else {
        None
    };
    let min_len = if periodic.min_length_factor > 0.0 {
        let data = base.edge_data()?;
        let mean = data.lengths.iter().sum::<f64>() / data.lengths.len() as f64;
        Some(periodic.min_length_factor * mean)
    } else {
        None
    };
    let nlp = PathNlp::new(
        init.dim(),
        init.num_vertices(),
        init.intervals(),
        params.clone(),
        Regime::Cyclic {
            rot: motion.rotation().to_vec(),
            trans: motion.translation_part().to_vec(),
        },
        NlpConfig {
            momentum: true,
            iso_edges,
            iso_targets,
            anchor,
            min_len,
        },
    );
    run_nlp(&nlp, init, opts)
}

/// Halves every time interval: old frames are kept, new frames are the
/// coordinate midpoints of their neighbors.
pub fn refine_time(path: &MotionPath) -> Result<MotionPath, SolveError> {
    let k = path.intervals();
    let dim = path.dim();
    let mut frames = Vec::with_capacity(2 * k + 1);
    for j in 0..k {
        frames.push(path.frame(j).clone());
        let mid: Vec<f64> = path
            .frame(j)
            .coords()
            .iter()
            .zip(path.frame(j + 1).coords())
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        frames.push(Polyline::new(dim, mid)?);
    }
    frames.push(path.frame(k).clone());
    Ok(MotionPath::new(frames)?)
}

/// Least-squares slope of `log(error)` against `log(1/resolution)`: the
/// empirical convergence order of a refinement ladder. Entries whose error
/// is at rounding level are skipped; returns NaN with fewer than two
/// usable points.
pub fn estimate_convergence_order(resolutions: &[usize], values: &[f64], reference: f64) -> f64 {
    assert_eq!(resolutions.len(), values.len());
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&k, &v) in resolutions.iter().zip(values) {
        let err = (v - reference).abs();
        if err > 1e-14 * (1.0 + reference.abs()) {
            xs.push(-(k as f64).ln());
            ys.push(err.ln());
        }
    }
    if xs.len() < 2 {
        return f64::NAN;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Repositions every frame of a shape sequence by a rigid motion so that
/// each interval satisfies the momentum conditions exactly; the first
/// frame is placed by `start`. Shapes themselves are unchanged.
///
/// Each interval is solved by Newton iteration over the rigid placement of
/// the next frame; intervals with too-large shape steps fall back to
/// recursive substep placement to produce a starting guess.
pub fn horizontal_lift(
    shapes: &MotionPath,
    start: &RigidMotion,
    outer: &OuterParams,
) -> Result<MotionPath, SolveError> {
    let n = shapes.num_vertices();
    if outer.num_edges() != n - 1 {
        return Err(SolveError::Invalid(format!(
            "drag parameters sized for {} edges, curve has {}",
            outer.num_edges(),
            n - 1
        )));
    }
    if start.dim() != shapes.dim() {
        return Err(SolveError::Invalid(
            "start placement dimension differs from shape dimension".into(),
        ));
    }
    let k = shapes.intervals();
    let mut placed: Vec<Polyline> = Vec::with_capacity(k + 1);
    placed.push(start.apply(shapes.frame(0))?);
    let mut carry = start.clone();
    for interval in 0..k {
        let motion = place_interval(
            &placed[interval],
            shapes.frame(interval),
            shapes.frame(interval + 1),
            &carry,
            outer,
            0,
        )
        .ok_or(SolveError::LiftDiverged { interval })?;
        placed.push(motion.apply(shapes.frame(interval + 1))?);
        carry = motion;
    }
    Ok(MotionPath::new(placed)?)
}

/// Rigid placement of `next` making the interval from `prev` momentum-free,
/// with recursive shape substeps as a globalization fallback.
fn place_interval(
    prev: &Polyline,
    shape_a: &Polyline,
    shape_b: &Polyline,
    guess: &RigidMotion,
    outer: &OuterParams,
    depth: usize,
) -> Option<RigidMotion> {
    if let Some(m) = newton_place(prev, shape_b, guess, outer) {
        return Some(m);
    }
    if depth >= 6 {
        return None;
    }
    let mid_coords: Vec<f64> = shape_a
        .coords()
        .iter()
        .zip(shape_b.coords())
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let mid = Polyline::new(shape_a.dim(), mid_coords).ok()?;
    if !mid.is_regular() {
        return None;
    }
    let m1 = place_interval(prev, shape_a, &mid, guess, outer, depth + 1)?;
    let mid_placed = m1.apply(&mid).ok()?;
    let m2 = place_interval(&mid_placed, &mid, shape_b, &m1, outer, depth + 1)?;
    // The substeps only supply a starting guess; the returned motion must
    // zero the momentum of the full interval.
    newton_place(prev, shape_b, &m2, outer)
}

/// Newton iteration over the rigid placement (rotation increment about the
/// previous frame's centroid plus translation) zeroing the interval
/// momentum rows.
fn newton_place(
    prev: &Polyline,
    shape: &Polyline,
    guess: &RigidMotion,
    outer: &OuterParams,
) -> Option<RigidMotion> {
    let d = prev.dim();
    let n = prev.num_vertices();
    let nd = n * d;
    let m = momentum_rows(d);
    let rt = vecmath::rot_dim(d);
    let pivot = prev.centroid().ok()?;

    let mut motion = guess.clone();
    let mut win = vec![0.0; 2 * nd];
    win[..nd].copy_from_slice(prev.coords());
    let mut res = vec![0.0; m];
    let mut jac = DMatrix::zeros(m, 2 * nd);
    let mut tol = f64::NAN;

    for _ in 0..40 {
        let cur = motion.apply(shape).ok()?;
        if !cur.is_regular() {
            return None;
        }
        win[nd..].copy_from_slice(cur.coords());
        momentum_window(d, n, &win, 1.0, outer, &mut res, Some(&mut jac), None);
        let rnorm = res.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        if tol.is_nan() {
            tol = 1e-13 * (1.0 + rnorm);
        }
        if rnorm <= tol {
            return Some(motion);
        }

        // Chain rule onto the placement increment at the current point.
        let mut a = DMatrix::zeros(m, m);
        let mut gen = [0.0; 3];
        for axis in 0..rt {
            for i in 0..n {
                let mut rel = [0.0; 3];
                for c in 0..d {
                    rel[c] = cur.coords()[i * d + c] - pivot[c];
                }
                vecmath::rotation_generator(d, axis, &rel, &mut gen);
                for r in 0..m {
                    let mut acc = 0.0;
                    for c in 0..d {
                        acc += jac[(r, nd + i * d + c)] * gen[c];
                    }
                    a[(r, axis)] += acc;
                }
            }
        }
        for c in 0..d {
            for i in 0..n {
                for r in 0..m {
                    a[(r, rt + c)] += jac[(r, nd + i * d + c)];
                }
            }
        }

        let rhs = nalgebra::DVector::from_fn(m, |r, _| -res[r]);
        let step = a.lu().solve(&rhs)?;
        if !step.iter().all(|v| v.is_finite()) {
            return None;
        }

        let delta = if d == 2 {
            let angle = step[0];
            let (s, c) = angle.sin_cos();
            let rpx = c * pivot[0] - s * pivot[1];
            let rpy = s * pivot[0] + c * pivot[1];
            RigidMotion::planar(
                angle,
                [pivot[0] + step[1] - rpx, pivot[1] + step[2] - rpy],
            )
        } else {
            let omega = [step[0], step[1], step[2]];
            let spin = RigidMotion::spatial(omega, [0.0; 3]);
            let mut rp = [0.0; 3];
            spin.apply_point(&pivot, &mut rp);
            RigidMotion::spatial(
                omega,
                [
                    pivot[0] + step[3] - rp[0],
                    pivot[1] + step[4] - rp[1],
                    pivot[2] + step[5] - rp[2],
                ],
            )
        };
        motion = delta.compose(&motion).ok()?;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::max_horizontality_violation;
    use crate::dissipation::InnerParams;

    fn params(n: usize, eps: f64) -> DissipationParams {
        DissipationParams {
            outer: OuterParams::uniform(n - 1, eps).unwrap(),
            inner: InnerParams::new(0.02, 0.5).unwrap(),
        }
    }

    fn wave(n: usize, phase: f64) -> Polyline {
        let coords: Vec<f64> = (0..n)
            .flat_map(|i| {
                let s = i as f64 / (n - 1) as f64;
                [s * 3.0, 0.3 * (4.0 * s + phase).sin()]
            })
            .collect();
        Polyline::new(2, coords).unwrap()
    }

    #[test]
    fn linear_init_interpolates_and_validates() {
        let a = wave(5, 0.0);
        let b = wave(5, 1.0);
        let path = init_linear(&a, &b, 4, 7).unwrap();
        assert_eq!(path.intervals(), 4);
        assert_eq!(path.frame(0).coords(), a.coords());
        assert_eq!(path.frame(4).coords(), b.coords());
        let mid = path.frame(2).coords();
        for (i, v) in mid.iter().enumerate() {
            let expect = 0.5 * (a.coords()[i] + b.coords()[i]);
            assert!((v - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_init_perturbs_through_degenerate_midpoints() {
        // Point-reflected copy: the straight interpolation at t = 1/2
        // collapses every vertex into one point.
        let a = wave(4, 0.3);
        let mut coords = a.coords().to_vec();
        for v in &mut coords {
            *v = -*v;
        }
        let b = Polyline::new(2, coords).unwrap();
        let path = init_linear(&a, &b, 2, 11).unwrap();
        assert!(path.frame(1).is_regular());
    }

    #[test]
    fn refine_time_doubles_intervals_and_keeps_old_frames() {
        let a = wave(4, 0.0);
        let b = wave(4, 0.8);
        let path = init_linear(&a, &b, 3, 7).unwrap();
        let fine = refine_time(&path).unwrap();
        assert_eq!(fine.intervals(), 6);
        for j in 0..=3 {
            assert_eq!(fine.frame(2 * j).coords(), path.frame(j).coords());
        }
        for j in 0..3 {
            let mid = fine.frame(2 * j + 1).coords();
            for (i, v) in mid.iter().enumerate() {
                let expect = 0.5 * (path.frame(j).coords()[i] + path.frame(j + 1).coords()[i]);
                assert!((v - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn convergence_order_recovers_synthetic_quadratic_decay() {
        // Values 1 + 4/k^2 against the exact limit 1.
        let ks = [4usize, 8, 16, 32];
        let vals: Vec<f64> = ks.iter().map(|&k| 1.0 + 4.0 / (k as f64).powi(2)).collect();
        let p = estimate_convergence_order(&ks, &vals, 1.0);
        assert!((p - 2.0).abs() < 1e-10, "order {p}");
    }

    #[test]
    fn convergence_order_skips_rounding_level_points() {
        let ks = [4usize, 8, 16];
        let vals = [1.25, 1.0625, 1.0];
        let p = estimate_convergence_order(&ks, &vals, 1.0);
        // The exact final point is dropped; slope from the first two.
        assert!((p - 2.0).abs() < 1e-10, "order {p}");
    }

    #[test]
    fn horizontal_lift_zeroes_momentum_and_preserves_shapes() {
        let n = 6;
        let k = 8;
        let frames: Vec<Polyline> = (0..=k)
            .map(|j| wave(n, 0.7 * j as f64 / k as f64))
            .collect();
        let shapes = MotionPath::new(frames).unwrap();
        let outer = OuterParams::uniform(n - 1, 0.3).unwrap();
        let lifted = horizontal_lift(&shapes, &RigidMotion::identity(2), &outer).unwrap();

        assert_eq!(lifted.frame(0).coords(), shapes.frame(0).coords());
        let viol = max_horizontality_violation(&lifted, &outer).unwrap();
        assert!(viol < 1e-10, "violation {viol}");

        // Every lifted frame is a rigid copy of its source shape.
        for j in 0..=k {
            let src = shapes.frame(j).edge_data().unwrap();
            let dst = lifted.frame(j).edge_data().unwrap();
            for (a, b) in src.lengths.iter().zip(&dst.lengths) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn horizontal_lift_commutes_with_the_start_placement() {
        let n = 5;
        let frames: Vec<Polyline> = (0..=4).map(|j| wave(n, 0.4 * j as f64)).collect();
        let shapes = MotionPath::new(frames).unwrap();
        let outer = OuterParams::uniform(n - 1, 0.3).unwrap();
        let g = RigidMotion::planar(0.7, [0.4, -0.9]);
        let plain = horizontal_lift(&shapes, &RigidMotion::identity(2), &outer).unwrap();
        let placed = horizontal_lift(&shapes, &g, &outer).unwrap();
        for j in 0..=4 {
            let moved = g.apply(plain.frame(j)).unwrap();
            for (a, b) in moved.coords().iter().zip(placed.frame(j).coords()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn horizontal_lift_is_identity_on_already_horizontal_paths() {
        let n = 6;
        let frames: Vec<Polyline> = (0..=5).map(|j| wave(n, 0.5 * j as f64)).collect();
        let shapes = MotionPath::new(frames).unwrap();
        let outer = OuterParams::uniform(n - 1, 0.3).unwrap();
        let lifted = horizontal_lift(&shapes, &RigidMotion::identity(2), &outer).unwrap();
        let again = horizontal_lift(&lifted, &RigidMotion::identity(2), &outer).unwrap();
        let a = lifted.to_flat();
        let b = again.to_flat();
        for i in 0..a.len() {
            assert!((a[i] - b[i]).abs() < 1e-9, "coord {i}");
        }
    }

    #[test]
    fn interpolation_solve_beats_linear_guess_energy() {
        use crate::dissipation::total_energy;
        let a = wave(5, 0.0);
        let b = wave(5, 1.2);
        let k = 5;
        let p = params(5, 0.4);
        let guess = init_linear(&a, &b, k, 7).unwrap();
        let (path, report) = solve_interpolation(&a, &b, k, &p, None, &SolveOptions::default())
            .unwrap();
        assert!(report.converged);
        let e_guess = total_energy(&guess, &p).unwrap();
        assert!(report.energy <= e_guess + 1e-12);
        assert_eq!(path.intervals(), k);
        assert_eq!(path.frame(0).coords(), a.coords());
        assert_eq!(path.frame(k).coords(), b.coords());
    }

    #[test]
    fn periodic_solve_closes_the_loop_through_the_displacement() {
        use crate::constraints::periodic_gap;
        let n = 5;
        let k = 6;
        let p = params(n, 0.3);
        let motion = RigidMotion::translation(&[0.05, 0.0]);
        // Seed with a lifted wave cycle, which is periodic in shape but
        // not yet in placement.
        let frames: Vec<Polyline> = (0..=k)
            .map(|j| wave(n, std::f64::consts::TAU * j as f64 / k as f64))
            .collect();
        let shapes = MotionPath::new(frames).unwrap();
        let init = horizontal_lift(&shapes, &RigidMotion::identity(2), &p.outer).unwrap();
        let periodic = PeriodicOptions {
            isometry_edges: Some((0..n - 1).collect()),
            ..PeriodicOptions::default()
        };
        let (path, report) =
            solve_periodic(&init, &motion, &p, &periodic, &SolveOptions::default()).unwrap();
        assert!(report.converged);
        assert!(report.constraint_violation <= 1e-8);
        let gap = periodic_gap(&path, &motion).unwrap();
        assert!(gap.amax() < 1e-12, "gap {}", gap.amax());

        // Pinned lengths hold on every frame.
        let base = init.frame(0).edge_data().unwrap();
        for j in 0..=path.intervals() {
            let ed = path.frame(j).edge_data().unwrap();
            for (a, b) in ed.lengths.iter().zip(&base.lengths) {
                assert!((a - b).abs() < 1e-7, "frame {j}");
            }
        }
    }

    #[test]
    fn free_length_periodic_rides_the_minimum_length_floor() {
        // With lengths free, shrinking the body scales the dissipation
        // down, so the optimum sits on the minimum-length bounds. This is
        // the hardest regime for the multiplier loop; it needs a larger
        // budget than the default.
        use crate::constraints::periodic_gap;
        let n = 4;
        let k = 4;
        let p = params(n, 0.3);
        let motion = RigidMotion::translation(&[0.05, 0.0]);
        let frames: Vec<Polyline> = (0..=k)
            .map(|j| wave(n, std::f64::consts::TAU * j as f64 / k as f64))
            .collect();
        let shapes = MotionPath::new(frames).unwrap();
        let init = horizontal_lift(&shapes, &RigidMotion::identity(2), &p.outer).unwrap();
        let opts = SolveOptions {
            max_iterations: 3000,
            ..SolveOptions::default()
        };
        let (path, report) =
            solve_periodic(&init, &motion, &p, &PeriodicOptions::default(), &opts).unwrap();
        assert!(report.converged);

        let gap = periodic_gap(&path, &motion).unwrap();
        assert!(gap.amax() < 1e-12, "gap {}", gap.amax());

        let base = init.frame(0).edge_data().unwrap();
        let mean = base.lengths.iter().sum::<f64>() / base.lengths.len() as f64;
        let floor = 0.1 * mean;
        let ed = path.frame(0).edge_data().unwrap();
        for l in &ed.lengths {
            assert!(*l >= floor - 1e-9, "bound violated: {l} < {floor}");
        }
        let smallest = ed.lengths.iter().cloned().fold(f64::MAX, f64::min);
        assert!(
            smallest <= floor * 1.5,
            "expected active bounds, smallest {smallest} floor {floor}"
        );
    }
}
