//! File formats: trajectory and dissipation CSV, JSON documents, atomic
//! writes.
//!
//! Floating-point values are printed with 17 significant digits, enough to
//! reproduce every double exactly, so re-ingesting an emitted trajectory
//! rebuilds the in-memory path bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use subrig_core::dissipation::IntervalDissipation;
use subrig_core::geometry::{MotionPath, Polyline};

use crate::CliError;

/// 17 significant digits: exact decimal round-trip for doubles.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes through a temp file in the same directory, then renames, so a
/// crash cannot leave a half-written artifact behind.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)
        .map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))?;
    let mut tmp: PathBuf = path.to_path_buf();
    let mut name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    name.push_str(".tmp");
    tmp.set_file_name(name);
    fs::write(&tmp, contents)
        .map_err(|e| CliError::config(format!("cannot write {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path)
        .map_err(|e| CliError::config(format!("cannot rename to {}: {e}", path.display())))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::config(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_atomic(path, &text)
}

/// Trajectory rows `(k, i, coordinates...)`, one per frame-vertex, ordered
/// by frame then vertex, after a one-line column header.
pub fn trajectory_csv(path: &MotionPath) -> String {
    let d = path.dim();
    let mut out = String::from("k,i");
    for c in 0..d {
        out.push(',');
        out.push(COORD_NAMES[c]);
    }
    out.push('\n');
    for k in 0..=path.intervals() {
        let frame = path.frame(k);
        for i in 0..frame.num_vertices() {
            out.push_str(&format!("{k},{i}"));
            for c in 0..d {
                out.push(',');
                out.push_str(&fmt_f64(frame.vertex(i)[c]));
            }
            out.push('\n');
        }
    }
    out
}

const COORD_NAMES: [char; 3] = ['x', 'y', 'z'];

/// Parses the trajectory format back into a path. Errors carry one-based
/// line numbers.
pub fn parse_trajectory(text: &str, what: &str) -> Result<MotionPath, CliError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| CliError::config(format!("{what}: empty file")))?;
    let cols = header.split(',').count();
    if !header.starts_with("k,i,") || !(cols == 4 || cols == 5) {
        return Err(CliError::config(format!(
            "{what}: line 1: expected header \"k,i,x,y[,z]\", got \"{header}\""
        )));
    }
    let d = cols - 2;
    let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(CliError::config(format!(
                "{what}: line {lineno}: expected {cols} fields, found {}",
                fields.len()
            )));
        }
        let k: usize = fields[0].parse().map_err(|_| {
            CliError::config(format!("{what}: line {lineno}: bad frame index \"{}\"", fields[0]))
        })?;
        let i: usize = fields[1].parse().map_err(|_| {
            CliError::config(format!("{what}: line {lineno}: bad vertex index \"{}\"", fields[1]))
        })?;
        let mut coords = Vec::with_capacity(d);
        for f in &fields[2..] {
            coords.push(f.parse::<f64>().map_err(|_| {
                CliError::config(format!("{what}: line {lineno}: bad coordinate \"{f}\""))
            })?);
        }
        rows.push((k, i, coords));
    }
    if rows.is_empty() {
        return Err(CliError::config(format!("{what}: no data rows")));
    }
    let n = rows.iter().map(|r| r.1).max().unwrap() + 1;
    let frames_expected = rows.iter().map(|r| r.0).max().unwrap() + 1;
    if rows.len() != frames_expected * n {
        return Err(CliError::config(format!(
            "{what}: {} rows do not cover {frames_expected} frames of {n} vertices",
            rows.len()
        )));
    }
    for (r, row) in rows.iter().enumerate() {
        let (k, i) = (r / n, r % n);
        if row.0 != k || row.1 != i {
            return Err(CliError::config(format!(
                "{what}: line {}: expected row ({k},{i}), found ({},{})",
                r + 2,
                row.0,
                row.1
            )));
        }
    }
    let mut frames = Vec::with_capacity(frames_expected);
    for chunk in rows.chunks(n) {
        let mut coords = Vec::with_capacity(n * d);
        for row in chunk {
            coords.extend_from_slice(&row.2);
        }
        let frame = Polyline::new(d, coords)
            .map_err(|e| CliError::config(format!("{what}: frame {}: {e}", chunk[0].0)))?;
        frames.push(frame);
    }
    MotionPath::new(frames).map_err(|e| CliError::config(format!("{what}: {e}")))
}

pub fn read_trajectory(path: &Path) -> Result<MotionPath, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    parse_trajectory(&text, &path.display().to_string())
}

/// Per-interval dissipation rows `(k, inner, outer, total)`.
pub fn dissipation_csv(series: &[IntervalDissipation]) -> String {
    let mut out = String::from("k,inner,outer,total\n");
    for (k, rec) in series.iter().enumerate() {
        out.push_str(&format!(
            "{k},{},{},{}\n",
            fmt_f64(rec.inner),
            fmt_f64(rec.outer),
            fmt_f64(rec.total)
        ));
    }
    out
}

/// Refinement table rows `(k, energy)`.
pub fn refine_csv(rows: &[(usize, f64)]) -> String {
    let mut out = String::from("k,energy\n");
    for (k, e) in rows {
        out.push_str(&format!("{k},{}\n", fmt_f64(*e)));
    }
    out
}
