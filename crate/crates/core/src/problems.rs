//! Ready-made problem setups: swimmer presets and traveling-wave gaits.
//!
//! The solver module exposes one entry point per boundary regime; this
//! module packages them into named experiments. It provides shape
//! constructors (serpenoid curves, the straight three-link swimmer), a
//! declarative problem description with an initial-guess policy, a
//! resolution ladder that doubles the time discretization between solves,
//! and post-processing that summarizes what a stroke achieved: net rigid
//! displacement, rotation, and how often the joint trace loops per period.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::dissipation::{
    dissipation_timeseries, total_energy, DissipationParams, IntervalDissipation,
};
use crate::geometry::{rigid_register, MotionPath, Polyline, RigidMotion};
use crate::solver::{
    horizontal_lift, init_linear, refine_time, solve_fixed_bvp, solve_interpolation,
    solve_net_displacement, solve_periodic, PeriodicOptions, SolveError, SolveOptions, SolveReport,
};

/// Boundary data of a motion planning problem.
#[derive(Debug, Clone)]
pub enum Boundary {
    /// Both end frames prescribed.
    Fixed { start: Polyline, end: Polyline },
    /// Start frame prescribed; the end frame is free except for a
    /// prescribed net rigid displacement of the body.
    Displacement { start: Polyline, motion: RigidMotion },
    /// Closed stroke: the final frame is the displaced copy of the free
    /// initial frame.
    Periodic { start: Polyline, motion: RigidMotion },
}

/// Initial-guess policy for the coarsest resolution.
#[derive(Debug, Clone)]
pub enum InitMode {
    /// Straight-line blend of the end frames; for periodic problems, a
    /// small traveling-wave loop around the start shape instead.
    Default,
    /// Warm start from an unconstrained interpolation solve.
    Relaxed,
    /// Caller-provided path at the coarsest resolution.
    Path(MotionPath),
}

/// Complete problem description for [`hierarchical_solve`].
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub boundary: Boundary,
    /// Time intervals at the coarsest level; every further level doubles
    /// the count.
    pub intervals: usize,
    pub params: DissipationParams,
    /// Edges whose length is pinned to its start-frame value.
    pub isometry_edges: Option<Vec<usize>>,
    /// Lower bound on initial-frame edge lengths as a fraction of their
    /// mean at the coarsest level (periodic problems only; keeps the body
    /// from collapsing toward zero size, where drag vanishes).
    pub min_length_factor: f64,
    /// Pin the initial-frame centroid (periodic problems only; removes the
    /// translational freedom left by an all-frames-free cycle).
    pub anchor: bool,
    pub init: InitMode,
}

/// Problem with both end frames prescribed.
pub fn make_fixed(
    start: Polyline,
    end: Polyline,
    intervals: usize,
    params: DissipationParams,
) -> ProblemSpec {
    ProblemSpec {
        boundary: Boundary::Fixed { start, end },
        intervals,
        params,
        isometry_edges: None,
        min_length_factor: 0.0,
        anchor: false,
        init: InitMode::Default,
    }
}

/// Problem with a prescribed net rigid displacement and a free end shape.
pub fn make_displacement(
    start: Polyline,
    motion: RigidMotion,
    intervals: usize,
    params: DissipationParams,
) -> ProblemSpec {
    ProblemSpec {
        boundary: Boundary::Displacement { start, motion },
        intervals,
        params,
        isometry_edges: None,
        min_length_factor: 0.0,
        anchor: false,
        init: InitMode::Default,
    }
}

/// Closed-stroke problem advancing the body by `motion` per period.
pub fn make_periodic(
    start: Polyline,
    motion: RigidMotion,
    intervals: usize,
    params: DissipationParams,
) -> ProblemSpec {
    ProblemSpec {
        boundary: Boundary::Periodic { start, motion },
        intervals,
        params,
        isometry_edges: None,
        min_length_factor: 0.1,
        anchor: true,
        init: InitMode::Default,
    }
}

/// Solves a problem on a ladder of time resolutions.
///
/// The coarsest level starts from the guess policy in the spec; every later
/// level doubles the interval count and warm-starts from the refined
/// previous solution. Momentum conditions hold on every level, so each
/// solve is a legitimate answer at its own resolution. Returns the finest
/// path together with one report per level. `opts.refinement_levels` sets
/// the number of levels (at least one).
pub fn hierarchical_solve(
    spec: &ProblemSpec,
    opts: &SolveOptions,
) -> Result<(MotionPath, Vec<SolveReport>), SolveError> {
    if spec.intervals == 0 {
        return Err(SolveError::Invalid(
            "at least one time interval is required".into(),
        ));
    }
    let levels = opts.refinement_levels.max(1);
    let mut guess = initial_guess(spec, opts)?;
    let mut reports = Vec::with_capacity(levels);
    let mut solved: Option<MotionPath> = None;
    let mut k = spec.intervals;
    for level in 0..levels {
        if level > 0 {
            guess = refine_time(solved.as_ref().unwrap())?;
            k *= 2;
        }
        let (path, report) = solve_level(spec, &guess, k, opts)?;
        reports.push(report);
        solved = Some(path);
    }
    Ok((solved.unwrap(), reports))
}

fn solve_level(
    spec: &ProblemSpec,
    guess: &MotionPath,
    k: usize,
    opts: &SolveOptions,
) -> Result<(MotionPath, SolveReport), SolveError> {
    let iso = spec.isometry_edges.as_deref();
    match &spec.boundary {
        Boundary::Fixed { start, end } => {
            solve_fixed_bvp(start, end, k, &spec.params, iso, Some(guess), opts)
        }
        Boundary::Displacement { start, motion } => {
            solve_net_displacement(start, motion, k, &spec.params, iso, Some(guess), opts)
        }
        Boundary::Periodic { start, motion } => {
            // The length floor is an absolute bound taken from the original
            // start shape; rescale the factor so it stays put even when a
            // previous level settled on shorter edges.
            let factor = if spec.min_length_factor > 0.0 {
                spec.min_length_factor * mean_edge_length(start)?
                    / mean_edge_length(guess.frame(0))?
            } else {
                0.0
            };
            let periodic = PeriodicOptions {
                isometry_edges: spec.isometry_edges.clone(),
                min_length_factor: factor,
                anchor: spec.anchor,
            };
            solve_periodic(guess, motion, &spec.params, &periodic, opts)
        }
    }
}

fn mean_edge_length(shape: &Polyline) -> Result<f64, SolveError> {
    let lengths = shape.edge_data()?.lengths;
    Ok(lengths.iter().sum::<f64>() / lengths.len() as f64)
}

fn initial_guess(spec: &ProblemSpec, opts: &SolveOptions) -> Result<MotionPath, SolveError> {
    let k = spec.intervals;
    match (&spec.init, &spec.boundary) {
        (InitMode::Path(p), _) => {
            if p.intervals() != k {
                return Err(SolveError::Invalid(format!(
                    "initial path has {} intervals, the problem asks for {}",
                    p.intervals(),
                    k
                )));
            }
            Ok(p.clone())
        }
        (InitMode::Default, Boundary::Fixed { start, end }) => {
            init_linear(start, end, k, opts.seed)
        }
        (InitMode::Relaxed, Boundary::Fixed { start, end }) => {
            relaxed_guess(start, end, k, &spec.params, opts)
        }
        (InitMode::Default, Boundary::Displacement { start, motion }) => {
            init_linear(start, &motion.apply(start)?, k, opts.seed)
        }
        (InitMode::Relaxed, Boundary::Displacement { start, motion }) => {
            relaxed_guess(start, &motion.apply(start)?, k, &spec.params, opts)
        }
        (InitMode::Default, Boundary::Periodic { start, .. }) => {
            wave_loop_guess(start, k, &spec.params, opts)
        }
        (InitMode::Relaxed, Boundary::Periodic { start, motion }) => {
            relaxed_guess(start, &motion.apply(start)?, k, &spec.params, opts)
        }
    }
}

/// Unconstrained interpolation between the end frames as a warm start; a
/// non-converged interpolation still yields its best iterate, which is all
/// a warm start needs.
fn relaxed_guess(
    start: &Polyline,
    end: &Polyline,
    k: usize,
    params: &DissipationParams,
    opts: &SolveOptions,
) -> Result<MotionPath, SolveError> {
    match solve_interpolation(start, end, k, params, None, opts) {
        Ok((path, _)) => Ok(path),
        Err(SolveError::NonConvergence { best, .. }) => Ok(*best),
        Err(e) => Err(e),
    }
}

/// Small traveling-wave loop around `start`: each interior turning angle is
/// modulated by a tenth of a radian with phase advancing along the body and
/// over the stroke, edge lengths stay those of `start`, the loop is
/// registered back onto the start pose, and the result is lifted so the
/// momentum conditions already hold at the guess. Falls back to a constant
/// path when the curve is not planar or has no interior vertex.
fn wave_loop_guess(
    start: &Polyline,
    k: usize,
    params: &DissipationParams,
    opts: &SolveOptions,
) -> Result<MotionPath, SolveError> {
    if start.dim() != 2 || start.num_vertices() < 3 || k < 2 {
        return init_linear(start, start, k, opts.seed);
    }
    let turns0 = start.turning_angles()?;
    let lengths = start.edge_data()?.lengths;
    let joints = turns0.len();
    let amp = 0.1;
    let mut frames = Vec::with_capacity(k + 1);
    for j in 0..k {
        let stroke = TAU * j as f64 / k as f64;
        let turns: Vec<f64> = (0..joints)
            .map(|i| {
                let along = TAU * (i + 1) as f64 / (joints + 1) as f64;
                turns0[i] + amp * (along + stroke).cos()
            })
            .collect();
        frames.push(polyline_from_angles(&[0.0, 0.0], 0.0, &lengths, &turns)?);
    }
    frames.push(frames[0].clone());
    let raw = MotionPath::new(frames)?;
    let place = rigid_register(raw.frame(0), start)?.motion;
    horizontal_lift(&raw, &place, &params.outer)
}

/// Builds a planar polyline from a base point, an initial heading, edge
/// lengths, and turning angles at the interior vertices.
pub fn polyline_from_angles(
    origin: &[f64],
    heading: f64,
    lengths: &[f64],
    turns: &[f64],
) -> Result<Polyline, SolveError> {
    if origin.len() != 2 {
        return Err(SolveError::Invalid(
            "angle construction is planar; the base point needs two coordinates".into(),
        ));
    }
    if lengths.is_empty() {
        return Err(SolveError::Invalid("at least one edge is required".into()));
    }
    if turns.len() + 1 != lengths.len() {
        return Err(SolveError::Invalid(format!(
            "{} edges need {} turning angles, got {}",
            lengths.len(),
            lengths.len() - 1,
            turns.len()
        )));
    }
    let finite = origin.iter().chain(lengths).chain(turns).all(|v| v.is_finite());
    if !finite || !heading.is_finite() || lengths.iter().any(|l| *l <= 0.0) {
        return Err(SolveError::Invalid(
            "angle construction needs finite data and positive lengths".into(),
        ));
    }
    let mut coords = Vec::with_capacity(2 * (lengths.len() + 1));
    coords.extend_from_slice(origin);
    let (mut x, mut y) = (origin[0], origin[1]);
    let mut dir = heading;
    for (i, len) in lengths.iter().enumerate() {
        if i > 0 {
            dir += turns[i - 1];
        }
        x += len * dir.cos();
        y += len * dir.sin();
        coords.push(x);
        coords.push(y);
    }
    Ok(Polyline::new(2, coords)?)
}

/// Serpenoid curve sample: `edges` equal segments whose turning angle at
/// arclength `s` is `amplitude * h * cos(TAU * s / wavelength + phase)`
/// with segment length `h = length / edges`. `amplitude` is the curvature
/// amplitude; zero gives a straight segment of the requested length. The
/// curve starts at the origin heading along the first axis.
pub fn serpenoid_shape(
    amplitude: f64,
    wavelength: f64,
    phase: f64,
    length: f64,
    edges: usize,
) -> Result<Polyline, SolveError> {
    if edges == 0 {
        return Err(SolveError::Invalid("at least one edge is required".into()));
    }
    let ok = length.is_finite()
        && length > 0.0
        && wavelength.is_finite()
        && wavelength > 0.0
        && amplitude.is_finite()
        && phase.is_finite();
    if !ok {
        return Err(SolveError::Invalid(
            "wave parameters must be finite with positive length and wavelength".into(),
        ));
    }
    let h = length / edges as f64;
    let lengths = vec![h; edges];
    let turns: Vec<f64> = (1..edges)
        .map(|i| amplitude * h * (TAU * (i as f64 * h) / wavelength + phase).cos())
        .collect();
    polyline_from_angles(&[0.0, 0.0], 0.0, &lengths, &turns)
}

/// One full stroke of a traveling serpenoid wave: `k + 1` shape frames with
/// the phase advancing by `TAU / k` per frame. The final frame repeats the
/// first bitwise, so the sequence closes exactly. Edge lengths are the
/// same constant in every frame: the wave bends the body without
/// stretching it.
pub fn serpenoid_gait(
    amplitude: f64,
    wavelength: f64,
    length: f64,
    edges: usize,
    k: usize,
) -> Result<MotionPath, SolveError> {
    if k < 2 {
        return Err(SolveError::Invalid(
            "a stroke needs at least two time intervals".into(),
        ));
    }
    let mut frames = Vec::with_capacity(k + 1);
    for j in 0..k {
        let phase = TAU * j as f64 / k as f64;
        frames.push(serpenoid_shape(amplitude, wavelength, phase, length, edges)?);
    }
    frames.push(frames[0].clone());
    Ok(MotionPath::new(frames)?)
}

/// Converts a per-edge thickness profile into drag weights with unit mean,
/// so the overall drag strength stays comparable across profiles.
pub fn thickness_profile_to_weights(thickness: &[f64]) -> Result<Vec<f64>, SolveError> {
    if thickness.is_empty() {
        return Err(SolveError::Invalid("thickness profile is empty".into()));
    }
    if thickness.iter().any(|t| !t.is_finite() || *t <= 0.0) {
        return Err(SolveError::Invalid(
            "thickness values must be finite and positive".into(),
        ));
    }
    let mean = thickness.iter().sum::<f64>() / thickness.len() as f64;
    Ok(thickness.iter().map(|t| t / mean).collect())
}

/// Ready-made swimmer preset: a rest shape plus the edges to pin.
#[derive(Debug, Clone)]
pub struct SwimmerPreset {
    /// Straight rest shape along the first axis, starting at the origin.
    pub shape: Polyline,
    /// Edges whose length stays fixed: all three for rigid links, only the
    /// middle one when the outer arms may stretch and compress.
    pub isometry_edges: Vec<usize>,
}

/// Three-link swimmer: two arms of `arm_length` joined by a middle link of
/// `middle_length`, at rest along the first axis.
pub fn purcell_swimmer(
    arm_length: f64,
    middle_length: f64,
    rigid_arms: bool,
) -> Result<SwimmerPreset, SolveError> {
    let ok = arm_length.is_finite()
        && arm_length > 0.0
        && middle_length.is_finite()
        && middle_length > 0.0;
    if !ok {
        return Err(SolveError::Invalid(
            "link lengths must be finite and positive".into(),
        ));
    }
    let x1 = arm_length;
    let x2 = arm_length + middle_length;
    let x3 = 2.0 * arm_length + middle_length;
    let shape =
        Polyline::from_points_2d(&[[0.0, 0.0], [x1, 0.0], [x2, 0.0], [x3, 0.0]])?;
    let isometry_edges = if rigid_arms { vec![0, 1, 2] } else { vec![1] };
    Ok(SwimmerPreset {
        shape,
        isometry_edges,
    })
}

/// Per-frame pair of joint angles of a planar three-link path.
pub fn extract_joint_angles(path: &MotionPath) -> Result<Vec<(f64, f64)>, SolveError> {
    if path.dim() != 2 || path.num_vertices() != 4 {
        return Err(SolveError::Invalid(
            "joint angles are defined for planar three-link bodies".into(),
        ));
    }
    let mut out = Vec::with_capacity(path.intervals() + 1);
    for frame in path.frames() {
        let t = frame.turning_angles()?;
        out.push((t[0], t[1]));
    }
    Ok(out)
}

/// What one stroke achieved, measured from its first and last frames.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaitSummary {
    /// Best-fit rigid motion carrying the first frame onto the last.
    pub holonomy: RigidMotion,
    /// Distance the body centroid travels under the holonomy.
    pub displacement: f64,
    /// Rotation angle of the holonomy.
    pub rotation_angle: f64,
    /// Joint-angle pair per frame, for planar three-link bodies only.
    pub joint_trace: Option<Vec<(f64, f64)>>,
    /// How many times the joint trace winds around its own centroid, when
    /// that count is well defined.
    pub cycles: Option<u32>,
    /// Set when the winding count is unreliable: the trace self-intersects,
    /// passes through its centroid, or turns by a non-integer amount.
    pub cycles_ambiguous: bool,
}

/// Summarizes a stroke: its holonomy, the induced centroid displacement
/// and rotation, and for three-link bodies the joint trace with a loop
/// count per period.
pub fn gait_summary(path: &MotionPath) -> Result<GaitSummary, SolveError> {
    let first = path.frame(0);
    let last = path.frame(path.intervals());
    let holonomy = rigid_register(first, last)?.motion;
    let c0 = first.centroid()?;
    let mut moved = vec![0.0; c0.len()];
    holonomy.apply_point(&c0, &mut moved);
    let displacement = moved
        .iter()
        .zip(&c0)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let rotation_angle = holonomy.rotation_angle();
    let joint_trace = if path.dim() == 2 && path.num_vertices() == 4 {
        Some(extract_joint_angles(path)?)
    } else {
        None
    };
    let (cycles, cycles_ambiguous) = match &joint_trace {
        Some(trace) => count_cycles(trace),
        None => (None, false),
    };
    Ok(GaitSummary {
        holonomy,
        displacement,
        rotation_angle,
        joint_trace,
        cycles,
        cycles_ambiguous,
    })
}

/// Winding count of a closed planar trace around its centroid.
///
/// A stationary trace counts as zero loops. A trace through its own
/// centroid has no winding number at all. A count is flagged ambiguous
/// when the closed polygon self-intersects or the total turning misses a
/// whole number of turns: a figure-eight winds zero times around its
/// middle without being stationary, and the flag is what tells those
/// apart.
fn count_cycles(trace: &[(f64, f64)]) -> (Option<u32>, bool) {
    let mut pts: Vec<(f64, f64)> = trace.to_vec();
    if let (Some(first), Some(last)) = (pts.first().copied(), pts.last().copied()) {
        // The closing point often differs in the last few digits when the
        // final frame was produced by a rigid motion of the first.
        let scale = 1.0 + first.0.abs().max(first.1.abs());
        if pts.len() >= 2
            && (last.0 - first.0).abs() <= 1e-9 * scale
            && (last.1 - first.1).abs() <= 1e-9 * scale
        {
            pts.pop();
        }
    }
    if pts.len() < 3 {
        return (Some(0), false);
    }
    let m = pts.len() as f64;
    let cx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let cy = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let radius = |p: &(f64, f64)| ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt();
    let r_max = pts.iter().map(radius).fold(0.0, f64::max);
    if r_max < 1e-12 {
        return (Some(0), false);
    }
    if pts.iter().any(|p| radius(p) < 1e-9 * r_max) {
        return (None, true);
    }
    let mut total = 0.0;
    for i in 0..pts.len() {
        let a = pts[i];
        let b = pts[(i + 1) % pts.len()];
        let pa = (a.1 - cy).atan2(a.0 - cx);
        let pb = (b.1 - cy).atan2(b.0 - cx);
        let mut step = pb - pa;
        step -= (step / TAU).round() * TAU;
        total += step;
    }
    let turns = total / TAU;
    let count = turns.round();
    let ambiguous = (turns - count).abs() > 0.05 || self_intersects(&pts);
    (Some(count.abs() as u32), ambiguous)
}

/// Proper crossing between any two non-adjacent edges of a closed polygon.
fn self_intersects(pts: &[(f64, f64)]) -> bool {
    let n = pts.len();
    let orient = |a: (f64, f64), b: (f64, f64), c: (f64, f64)| {
        (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
    };
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        for j in (i + 1)..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (c, d) = (pts[j], pts[(j + 1) % n]);
            let straddles = orient(a, b, c) * orient(a, b, d) < 0.0
                && orient(c, d, a) * orient(c, d, b) < 0.0;
            if straddles {
                return true;
            }
        }
    }
    false
}

/// Side-by-side cost of a prescribed reference stroke and the optimal
/// motion with the same end frames.
#[derive(Debug, Clone)]
pub struct GaitComparison {
    pub reference_energy: f64,
    pub optimized_energy: f64,
    /// Optimized over reference energy; below one when optimizing helps.
    pub ratio: f64,
    pub reference_series: Vec<IntervalDissipation>,
    pub optimized_series: Vec<IntervalDissipation>,
    pub reference_path: MotionPath,
    pub optimized_path: MotionPath,
    pub report: SolveReport,
}

/// Lifts one serpenoid stroke into a momentum-consistent motion, then
/// minimizes the dissipation between the same two end frames and reports
/// both costs.
///
/// The optimized problem keeps the momentum conditions and the end frames
/// of the lifted reference but is otherwise free, so at equal
/// discretization its energy can only fall. A zero amplitude is rejected:
/// a straight body has no stroke to compare.
pub fn compare_serpenoid_vs_geodesic(
    amplitude: f64,
    wavelength: f64,
    length: f64,
    edges: usize,
    k: usize,
    params: &DissipationParams,
    opts: &SolveOptions,
) -> Result<GaitComparison, SolveError> {
    if amplitude == 0.0 {
        return Err(SolveError::Invalid(
            "zero wave amplitude leaves nothing to compare".into(),
        ));
    }
    if params.outer.num_edges() != edges {
        return Err(SolveError::Invalid(format!(
            "drag parameters sized for {} edges, the stroke uses {}",
            params.outer.num_edges(),
            edges
        )));
    }
    let shapes = serpenoid_gait(amplitude, wavelength, length, edges, k)?;
    let reference_path = horizontal_lift(&shapes, &RigidMotion::identity(2), &params.outer)?;
    let start = reference_path.frame(0).clone();
    let end = reference_path.frame(k).clone();
    let (optimized_path, report) =
        solve_fixed_bvp(&start, &end, k, params, None, Some(&reference_path), opts)?;
    let reference_energy = total_energy(&reference_path, params)?;
    let optimized_energy = total_energy(&optimized_path, params)?;
    Ok(GaitComparison {
        ratio: optimized_energy / reference_energy,
        reference_series: dissipation_timeseries(&reference_path, params)?,
        optimized_series: dissipation_timeseries(&optimized_path, params)?,
        reference_energy,
        optimized_energy,
        reference_path,
        optimized_path,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn params(edges: usize, eps: f64) -> DissipationParams {
        DissipationParams::uniform(edges, eps, 0.02, 0.5).unwrap()
    }

    fn wave(n: usize, phase: f64) -> Polyline {
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let s = i as f64 / (n - 1) as f64;
                [3.0 * s, 0.3 * (4.0 * s + phase).sin()]
            })
            .collect();
        Polyline::from_points_2d(&pts).unwrap()
    }

    #[test]
    fn straight_wave_recovers_the_requested_total_length() {
        let p = serpenoid_shape(0.0, 1.0, 0.0, 2.0, 8).unwrap();
        assert_abs_diff_eq!(p.total_length(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.vertex(8)[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.vertex(8)[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn wave_phase_shifted_by_a_full_turn_is_unchanged() {
        let a = serpenoid_shape(1.3, 2.0, 0.4, 1.5, 9).unwrap();
        let b = serpenoid_shape(1.3, 2.0, 0.4 + TAU, 1.5, 9).unwrap();
        for (x, y) in a.coords().iter().zip(b.coords()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn wave_turning_profile_matches_the_closed_form() {
        let (amp, lam, phase, len, edges) = (1.3, 2.0, 0.4, 1.5, 10usize);
        let p = serpenoid_shape(amp, lam, phase, len, edges).unwrap();
        let h = len / edges as f64;
        let turns = p.turning_angles().unwrap();
        assert_eq!(turns.len(), edges - 1);
        for (i, t) in turns.iter().enumerate() {
            let s = (i + 1) as f64 * h;
            let expect = amp * h * (TAU * s / lam + phase).cos();
            assert_abs_diff_eq!(*t, expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn wave_stroke_closes_bitwise_and_keeps_edge_lengths() {
        let g = serpenoid_gait(1.0, 2.0, 1.0, 6, 8).unwrap();
        assert_eq!(g.intervals(), 8);
        assert_eq!(g.frame(8).coords(), g.frame(0).coords());
        let h = 1.0 / 6.0;
        for frame in g.frames() {
            for l in frame.edge_data().unwrap().lengths {
                assert_abs_diff_eq!(l, h, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn thickness_weights_normalize_to_unit_mean() {
        let w = thickness_profile_to_weights(&[2.0, 2.0, 2.0]).unwrap();
        for v in &w {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-15);
        }
        let w = thickness_profile_to_weights(&[1.0, 2.0, 3.0]).unwrap();
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[2], 1.5, epsilon = 1e-15);
        assert!(thickness_profile_to_weights(&[]).is_err());
        assert!(thickness_profile_to_weights(&[1.0, 0.0]).is_err());
        assert!(thickness_profile_to_weights(&[1.0, -2.0]).is_err());
    }

    #[test]
    fn three_link_preset_lies_straight_with_the_requested_lengths() {
        let rigid = purcell_swimmer(1.0, 0.8, true).unwrap();
        assert_eq!(rigid.shape.num_vertices(), 4);
        let expect_x = [0.0, 1.0, 1.8, 2.8];
        for (i, &x) in expect_x.iter().enumerate() {
            assert_abs_diff_eq!(rigid.shape.vertex(i)[0], x, epsilon = 1e-15);
            assert_abs_diff_eq!(rigid.shape.vertex(i)[1], 0.0, epsilon = 1e-15);
        }
        assert_eq!(rigid.isometry_edges, vec![0, 1, 2]);
        let springy = purcell_swimmer(1.0, 0.8, false).unwrap();
        assert_eq!(springy.isometry_edges, vec![1]);
        assert!(purcell_swimmer(0.0, 1.0, true).is_err());
    }

    #[test]
    fn angle_construction_recovers_right_angles() {
        let p = polyline_from_angles(&[0.0, 0.0], 0.0, &[1.0, 1.0, 1.0], &[PI / 2.0, -PI / 2.0])
            .unwrap();
        let expect = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [2.0, 1.0]];
        for (i, e) in expect.iter().enumerate() {
            assert_abs_diff_eq!(p.vertex(i)[0], e[0], epsilon = 1e-15);
            assert_abs_diff_eq!(p.vertex(i)[1], e[1], epsilon = 1e-15);
        }
        let turns = p.turning_angles().unwrap();
        assert_abs_diff_eq!(turns[0], PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(turns[1], -PI / 2.0, epsilon = 1e-12);
        assert!(polyline_from_angles(&[0.0, 0.0], 0.0, &[1.0, 1.0], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn summary_of_a_constant_path_reports_no_motion() {
        let shape =
            polyline_from_angles(&[0.2, -0.1], 0.3, &[1.0, 1.0, 1.0], &[0.3, -0.2]).unwrap();
        let path = MotionPath::new(vec![shape; 4]).unwrap();
        let s = gait_summary(&path).unwrap();
        assert_abs_diff_eq!(s.displacement, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.rotation_angle, 0.0, epsilon = 1e-12);
        assert_eq!(s.cycles, Some(0));
        assert!(!s.cycles_ambiguous);
        assert_eq!(s.joint_trace.as_ref().unwrap().len(), 4);
    }

    #[test]
    fn summary_recovers_a_pure_transport_holonomy() {
        let shape =
            polyline_from_angles(&[0.0, 0.0], 0.1, &[1.0, 0.8, 1.2], &[0.4, -0.3]).unwrap();
        let g = RigidMotion::planar(0.4, [0.2, -0.1]);
        let moved = g.apply(&shape).unwrap();
        let path = MotionPath::new(vec![shape.clone(), moved]).unwrap();
        let s = gait_summary(&path).unwrap();
        assert_abs_diff_eq!(s.rotation_angle, 0.4, epsilon = 1e-10);
        let c0 = shape.centroid().unwrap();
        let mut gc0 = vec![0.0; 2];
        g.apply_point(&c0, &mut gc0);
        let expect = ((gc0[0] - c0[0]).powi(2) + (gc0[1] - c0[1]).powi(2)).sqrt();
        assert_abs_diff_eq!(s.displacement, expect, epsilon = 1e-10);
        assert_eq!(s.cycles, Some(0));
    }

    #[test]
    fn winding_counts_one_clean_loop() {
        let k = 12;
        let mut frames = Vec::new();
        for j in 0..k {
            let phi = TAU * j as f64 / k as f64;
            let turns = [0.3 * phi.cos(), 0.3 * phi.sin()];
            frames.push(
                polyline_from_angles(&[0.0, 0.0], 0.0, &[1.0, 1.0, 1.0], &turns).unwrap(),
            );
        }
        frames.push(frames[0].clone());
        let path = MotionPath::new(frames).unwrap();
        let s = gait_summary(&path).unwrap();
        assert_eq!(s.cycles, Some(1));
        assert!(!s.cycles_ambiguous);
    }

    #[test]
    fn drifting_double_loop_is_counted_but_flagged() {
        let k = 24;
        let mut frames = Vec::new();
        for j in 0..k {
            let r = 0.2 + 0.05 * j as f64 / k as f64;
            let phi = 2.0 * TAU * j as f64 / k as f64;
            let turns = [r * phi.cos(), r * phi.sin()];
            frames.push(
                polyline_from_angles(&[0.0, 0.0], 0.0, &[1.0, 1.0, 1.0], &turns).unwrap(),
            );
        }
        frames.push(frames[0].clone());
        let path = MotionPath::new(frames).unwrap();
        let s = gait_summary(&path).unwrap();
        assert_eq!(s.cycles, Some(2));
        assert!(s.cycles_ambiguous);
    }

    #[test]
    fn hierarchical_ladder_doubles_the_resolution() {
        let start = wave(5, 0.0);
        let end = wave(5, 0.6);
        let mut spec = make_fixed(start, end, 3, params(4, 0.3));
        spec.init = InitMode::Relaxed;
        let opts = SolveOptions {
            refinement_levels: 2,
            max_iterations: 600,
            ..SolveOptions::default()
        };
        let (path, reports) = hierarchical_solve(&spec, &opts).unwrap();
        assert_eq!(reports.len(), 2);
        assert_eq!(path.intervals(), 6);
        for r in &reports {
            assert!(r.converged);
            assert!(r.constraint_violation <= 1e-8);
        }
    }

    #[test]
    fn mismatched_initial_path_is_rejected() {
        let start = wave(5, 0.0);
        let end = wave(5, 0.6);
        let mut spec = make_fixed(start.clone(), end.clone(), 3, params(4, 0.3));
        spec.init = InitMode::Path(init_linear(&start, &end, 4, 1).unwrap());
        let err = hierarchical_solve(&spec, &SolveOptions::default());
        assert!(matches!(err, Err(SolveError::Invalid(_))));
    }

    #[test]
    fn displacement_problem_solves_through_the_builder() {
        let start = wave(5, 0.0);
        let motion = RigidMotion::translation(&[0.01, 0.0]);
        let spec = make_displacement(start, motion, 4, params(4, 0.3));
        let opts = SolveOptions {
            refinement_levels: 1,
            max_iterations: 800,
            ..SolveOptions::default()
        };
        let (path, reports) = hierarchical_solve(&spec, &opts).unwrap();
        assert_eq!(path.intervals(), 4);
        assert!(reports[0].converged);
        assert!(reports[0].constraint_violation <= 1e-8);
    }

    #[test]
    fn periodic_problem_solves_through_the_builder_with_the_default_loop() {
        let start = wave(5, 0.0);
        let motion = RigidMotion::translation(&[0.05, 0.0]);
        let mut spec = make_periodic(start, motion.clone(), 6, params(4, 0.3));
        spec.isometry_edges = Some(vec![0, 1, 2, 3]);
        let opts = SolveOptions {
            refinement_levels: 1,
            max_iterations: 1500,
            ..SolveOptions::default()
        };
        let (path, reports) = hierarchical_solve(&spec, &opts).unwrap();
        assert!(reports[0].converged);
        assert!(reports[0].constraint_violation <= 1e-8);
        let displaced = motion.apply(path.frame(0)).unwrap();
        for (a, b) in path.frame(6).coords().iter().zip(displaced.coords()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn optimized_stroke_beats_the_prescribed_wave() {
        let p = params(6, 0.3);
        let opts = SolveOptions {
            max_iterations: 800,
            ..SolveOptions::default()
        };
        let cmp = compare_serpenoid_vs_geodesic(1.2, 2.0, 1.0, 6, 6, &p, &opts).unwrap();
        assert!(cmp.report.converged);
        assert!(cmp.optimized_energy < cmp.reference_energy);
        assert!(cmp.ratio < 1.0);
        assert_eq!(cmp.reference_series.len(), 6);
        assert_eq!(cmp.optimized_series.len(), 6);
        assert_eq!(cmp.reference_path.intervals(), 6);
        assert_eq!(cmp.optimized_path.intervals(), 6);
    }

    #[test]
    fn zero_amplitude_comparison_is_rejected() {
        let p = params(6, 0.3);
        let err = compare_serpenoid_vs_geodesic(0.0, 2.0, 1.0, 6, 6, &p, &SolveOptions::default());
        assert!(matches!(err, Err(SolveError::Invalid(_))));
    }
}
