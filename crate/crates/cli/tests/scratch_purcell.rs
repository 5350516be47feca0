//! Throwaway calibration runner for the three-link swimmer fixture. Not
//! part of the shipped suite; deleted once the acceptance fixtures are
//! pinned.

use std::f64::consts::TAU;
use std::fs;

use subrig_core::dissipation::DissipationParams;
use subrig_core::geometry::{MotionPath, Polyline, RigidMotion};
use subrig_core::problems::gait_summary;
use subrig_core::solver::{
    horizontal_lift, refine_time, solve_periodic, PeriodicOptions, SolveError, SolveOptions,
};

fn chain(a1: f64, a2: f64) -> Polyline {
    Polyline::new(
        2,
        vec![
            -a1.cos(),
            a1.sin(),
            0.0,
            0.0,
            1.0,
            0.0,
            1.0 + a2.cos(),
            a2.sin(),
        ],
    )
    .unwrap()
}

fn circle_loop(amp: f64, k: usize, params: &DissipationParams) -> MotionPath {
    // Clockwise in (a1, a2), the handedness of forward displacement here.
    let frames: Vec<Polyline> = (0..=k)
        .map(|j| {
            let t = TAU * j as f64 / k as f64;
            chain(amp * t.cos(), -amp * t.sin())
        })
        .collect();
    let shapes = MotionPath::new(frames).unwrap();
    horizontal_lift(&shapes, &RigidMotion::identity(2), &params.outer).unwrap()
}

fn shoelace(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len();
    let mut a = 0.0;
    for i in 0..n {
        let p = pts[i];
        let q = pts[(i + 1) % n];
        a += p.0 * q.1 - q.0 * p.1;
    }
    0.5 * a.abs()
}

fn hull_area(pts: &[(f64, f64)]) -> f64 {
    let mut p: Vec<(f64, f64)> = pts.to_vec();
    p.sort_by(|a, b| a.partial_cmp(b).unwrap());
    p.dedup();
    if p.len() < 3 {
        return 0.0;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &q in &p {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], q) <= 0.0 {
            lower.pop();
        }
        lower.push(q);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &q in p.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], q) <= 0.0 {
            upper.pop();
        }
        upper.push(q);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    shoelace(&lower)
}

/// Trace with the duplicated closing point removed.
fn closed_trace(trace: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = trace.to_vec();
    if pts.len() >= 2 {
        let first = pts[0];
        let last = *pts.last().unwrap();
        let scale = 1.0 + first.0.abs().max(first.1.abs());
        if (last.0 - first.0).abs() <= 1e-9 * scale && (last.1 - first.1).abs() <= 1e-9 * scale {
            pts.pop();
        }
    }
    pts
}

fn turns_about_centroid(pts: &[(f64, f64)]) -> f64 {
    let m = pts.len() as f64;
    let cx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let cy = pts.iter().map(|p| p.1).sum::<f64>() / m;
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
    total / TAU
}

/// Proper crossings between non-adjacent closed-polygon edges, with pairs.
fn crossings(pts: &[(f64, f64)]) -> Vec<(usize, usize)> {
    let n = pts.len();
    let orient = |a: (f64, f64), b: (f64, f64), c: (f64, f64)| {
        (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
    };
    let mut out = Vec::new();
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
                out.push((i, j));
            }
        }
    }
    out
}

fn dump_trace(path: &str, pts: &[(f64, f64)]) {
    let mut s = String::new();
    for p in pts {
        s.push_str(&format!("{:.12e},{:.12e}\n", p.0, p.1));
    }
    fs::write(path, s).unwrap();
}

struct LoopStats {
    poly: f64,
    hull: f64,
    excess: f64,
    turns: f64,
    crossings: Vec<(usize, usize)>,
}

fn loop_stats(path: &MotionPath) -> LoopStats {
    let summary = gait_summary(path).unwrap();
    let pts = closed_trace(summary.joint_trace.as_ref().unwrap());
    let poly = shoelace(&pts);
    let hull = hull_area(&pts);
    LoopStats {
        poly,
        hull,
        excess: 100.0 * (hull - poly) / hull.max(1e-300),
        turns: turns_about_centroid(&pts),
        crossings: crossings(&pts),
    }
}

fn report_line(tag: &str, report: &subrig_core::solver::SolveReport, s: &LoopStats) {
    println!(
        "{tag} conv={} iters={} E={:.5e} turns={:+.4} nx={} poly={:.4} hull={:.4} excess={:+.2}%",
        report.converged,
        report.iterations,
        report.energy,
        s.turns,
        s.crossings.len(),
        s.poly,
        s.hull,
        s.excess
    );
    if !s.crossings.is_empty() {
        println!("    crossing pairs: {:?}", &s.crossings[..s.crossings.len().min(8)]);
    }
}

#[test]
fn calibrate_displacement() {
    fs::create_dir_all("/tmp/purcell_traces").unwrap();
    let eps = 0.2;
    let params = DissipationParams::uniform(3, eps, 0.0, 0.0).unwrap();
    let periodic = PeriodicOptions {
        isometry_edges: Some(vec![0, 1, 2]),
        ..Default::default()
    };
    let opts = SolveOptions {
        max_iterations: 4000,
        ..Default::default()
    };
    for &k in &[24_usize, 32] {
        for &amp in &[0.9_f64, 1.1] {
            let init = circle_loop(amp, k, &params);
            for &delta in &[0.20_f64, 0.24, 0.28, 0.32, 0.36, 0.40] {
                let motion = RigidMotion::planar(0.0, [delta, 0.0]);
                match solve_periodic(&init, &motion, &params, &periodic, &opts) {
                    Ok((path, report)) => {
                        let s = loop_stats(&path);
                        report_line(&format!("k={k} amp={amp} delta={delta:.2}"), &report, &s);
                        dump_trace(
                            &format!("/tmp/purcell_traces/direct_k{k}_a{amp}_d{delta:.2}.csv"),
                            &closed_trace(
                                gait_summary(&path).unwrap().joint_trace.as_ref().unwrap(),
                            ),
                        );
                    }
                    Err(SolveError::NonConvergence { report, .. }) => {
                        println!(
                            "k={k} amp={amp} delta={delta:.2} NONCONV iters={} E={:.5e}",
                            report.iterations, report.energy
                        );
                    }
                    Err(e) => panic!("delta={delta:.2}: {e}"),
                }
            }
        }
    }
}
