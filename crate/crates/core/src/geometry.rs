//! Polygonal curves, rigid motions, and rigid registration.
//!
//! A [`Polyline`] is an ordered list of `N >= 2` vertices in dimension 2 or 3,
//! stored flat. Edges connect consecutive vertices. A curve is regular when
//! every edge is longer than its degeneracy tolerance, which scales with the
//! bounding-box diameter. A [`MotionPath`] is a time-uniform sequence of
//! `K + 1` frames of equal vertex count, each frame regular.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vecmath;

/// Errors from curve and rigid-motion construction and queries.
#[derive(Debug, Clone, Error)]
pub enum GeometryError {
    /// An edge shorter than the regularity tolerance was encountered.
    #[error("degenerate edge {edge}: length {length:.3e} is below tolerance {tolerance:.3e}")]
    DegenerateEdge {
        edge: usize,
        length: f64,
        tolerance: f64,
    },
    #[error("invalid polyline: {0}")]
    InvalidPolyline(String),
    #[error("invalid rigid motion: {0}")]
    InvalidRigidMotion(String),
    #[error("mismatched operands: {0}")]
    Mismatch(String),
}

/// Relative scale of the edge-degeneracy tolerance.
const DEGENERACY_REL_TOL: f64 = 1e-10;

/// Entry-wise tolerance for accepting a matrix as a proper rotation.
const ROTATION_TOL: f64 = 1e-12;

/// An ordered polygonal curve with `N >= 2` vertices in dimension 2 or 3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    dim: usize,
    coords: Vec<f64>,
}

/// Per-edge lengths and unit tangents of a regular polyline.
#[derive(Debug, Clone)]
pub struct EdgeData {
    /// Edge lengths, one per edge.
    pub lengths: Vec<f64>,
    /// Unit tangents, flat with the parent stride.
    pub tangents: Vec<f64>,
}

impl Polyline {
    /// Builds a polyline from flat coordinates `[x0, y0, (z0,) x1, y1, ...]`.
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self, GeometryError> {
        if dim != 2 && dim != 3 {
            return Err(GeometryError::InvalidPolyline(format!(
                "dimension must be 2 or 3, got {dim}"
            )));
        }
        if coords.len() % dim != 0 {
            return Err(GeometryError::InvalidPolyline(format!(
                "coordinate count {} is not a multiple of dimension {dim}",
                coords.len()
            )));
        }
        if coords.len() / dim < 2 {
            return Err(GeometryError::InvalidPolyline(
                "a polyline needs at least two vertices".into(),
            ));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::InvalidPolyline(
                "coordinates must be finite".into(),
            ));
        }
        Ok(Self { dim, coords })
    }

    /// Convenience constructor from 2D points.
    pub fn from_points_2d(points: &[[f64; 2]]) -> Result<Self, GeometryError> {
        Self::new(2, points.iter().flatten().copied().collect())
    }

    /// Convenience constructor from 3D points.
    pub fn from_points_3d(points: &[[f64; 3]]) -> Result<Self, GeometryError> {
        Self::new(3, points.iter().flatten().copied().collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_vertices(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn num_edges(&self) -> usize {
        self.num_vertices() - 1
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn vertex(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Diameter of the axis-aligned bounding box.
    pub fn bbox_diameter(&self) -> f64 {
        let d = self.dim;
        let mut sq = 0.0;
        for c in 0..d {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for i in 0..self.num_vertices() {
                let v = self.coords[i * d + c];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            sq += (hi - lo) * (hi - lo);
        }
        sq.sqrt()
    }

    /// Edge-degeneracy tolerance: relative to the curve extent, floored at
    /// the absolute scale of a unit-size curve.
    pub fn degeneracy_tolerance(&self) -> f64 {
        DEGENERACY_REL_TOL * self.bbox_diameter().max(1.0)
    }

    /// True when every edge is longer than the degeneracy tolerance.
    pub fn is_regular(&self) -> bool {
        self.validate_regular().is_ok()
    }

    /// Errors with the first offending edge when the curve is not regular.
    pub fn validate_regular(&self) -> Result<(), GeometryError> {
        let tol = self.degeneracy_tolerance();
        let d = self.dim;
        for i in 0..self.num_edges() {
            let mut sq = 0.0;
            for c in 0..d {
                let e = self.coords[(i + 1) * d + c] - self.coords[i * d + c];
                sq += e * e;
            }
            let len = sq.sqrt();
            if len <= tol {
                return Err(GeometryError::DegenerateEdge {
                    edge: i,
                    length: len,
                    tolerance: tol,
                });
            }
        }
        Ok(())
    }

    /// Lengths and unit tangents of every edge.
    pub fn edge_data(&self) -> Result<EdgeData, GeometryError> {
        let d = self.dim;
        let ne = self.num_edges();
        let tol = self.degeneracy_tolerance();
        let mut lengths = Vec::with_capacity(ne);
        let mut tangents = vec![0.0; ne * d];
        for i in 0..ne {
            let mut sq = 0.0;
            for c in 0..d {
                let e = self.coords[(i + 1) * d + c] - self.coords[i * d + c];
                tangents[i * d + c] = e;
                sq += e * e;
            }
            let len = sq.sqrt();
            if len <= tol {
                return Err(GeometryError::DegenerateEdge {
                    edge: i,
                    length: len,
                    tolerance: tol,
                });
            }
            for c in 0..d {
                tangents[i * d + c] /= len;
            }
            lengths.push(len);
        }
        Ok(EdgeData { lengths, tangents })
    }

    /// Edge midpoints, flat with the parent stride.
    pub fn midpoints(&self) -> Vec<f64> {
        let d = self.dim;
        let ne = self.num_edges();
        let mut out = vec![0.0; ne * d];
        for i in 0..ne {
            for c in 0..d {
                out[i * d + c] = 0.5 * (self.coords[i * d + c] + self.coords[(i + 1) * d + c]);
            }
        }
        out
    }

    /// Turning angles at the `N - 2` interior vertices.
    ///
    /// In 2D the angle is signed, positive for a left turn, in `(-pi, pi]`.
    /// In 3D it is the unsigned angle between consecutive tangents in `[0, pi]`.
    pub fn turning_angles(&self) -> Result<Vec<f64>, GeometryError> {
        let d = self.dim;
        let edges = self.edge_data()?;
        let ne = self.num_edges();
        let mut out = Vec::with_capacity(ne.saturating_sub(1));
        for i in 0..ne.saturating_sub(1) {
            let u = &edges.tangents[i * d..(i + 1) * d];
            let v = &edges.tangents[(i + 1) * d..(i + 2) * d];
            let c = vecmath::dot(u, v);
            let angle = if d == 2 {
                vecmath::cross2(u, v).atan2(c)
            } else {
                let s = vecmath::norm(&vecmath::cross3(u, v));
                s.atan2(c)
            };
            out.push(angle);
        }
        Ok(out)
    }

    /// Total edge length.
    pub fn total_length(&self) -> f64 {
        let d = self.dim;
        let mut sum = 0.0;
        for i in 0..self.num_edges() {
            let mut sq = 0.0;
            for c in 0..d {
                let e = self.coords[(i + 1) * d + c] - self.coords[i * d + c];
                sq += e * e;
            }
            sum += sq.sqrt();
        }
        sum
    }

    /// Length-weighted average of the edge midpoints.
    ///
    /// This is the barycenter of the curve seen as a uniform wire, so it is
    /// invariant under subdividing edges and equivariant under rigid motions.
    pub fn centroid(&self) -> Result<Vec<f64>, GeometryError> {
        let d = self.dim;
        let edges = self.edge_data()?;
        let mids = self.midpoints();
        let mut out = vec![0.0; d];
        let mut total = 0.0;
        for (i, &len) in edges.lengths.iter().enumerate() {
            total += len;
            for c in 0..d {
                out[c] += len * mids[i * d + c];
            }
        }
        for c in out.iter_mut() {
            *c /= total;
        }
        Ok(out)
    }
}

/// A direct (orientation-preserving) rigid motion `x -> A x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidMotion {
    dim: usize,
    /// Rotation, row-major `d x d`.
    rot: Vec<f64>,
    trans: Vec<f64>,
}

impl RigidMotion {
    /// Builds a rigid motion, validating that `rot` is a proper rotation.
    pub fn new(dim: usize, rot: Vec<f64>, trans: Vec<f64>) -> Result<Self, GeometryError> {
        if dim != 2 && dim != 3 {
            return Err(GeometryError::InvalidRigidMotion(format!(
                "dimension must be 2 or 3, got {dim}"
            )));
        }
        if rot.len() != dim * dim || trans.len() != dim {
            return Err(GeometryError::InvalidRigidMotion(
                "rotation or translation has the wrong size".into(),
            ));
        }
        if rot.iter().chain(trans.iter()).any(|c| !c.is_finite()) {
            return Err(GeometryError::InvalidRigidMotion(
                "entries must be finite".into(),
            ));
        }
        // Orthogonality: A^T A == I entry-wise within tolerance.
        for i in 0..dim {
            for j in 0..dim {
                let mut acc = 0.0;
                for k in 0..dim {
                    acc += rot[k * dim + i] * rot[k * dim + j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                if (acc - expect).abs() > ROTATION_TOL {
                    return Err(GeometryError::InvalidRigidMotion(format!(
                        "matrix is not orthogonal: (A^T A)[{i},{j}] = {acc:.17}"
                    )));
                }
            }
        }
        let det = if dim == 2 {
            rot[0] * rot[3] - rot[1] * rot[2]
        } else {
            rot[0] * (rot[4] * rot[8] - rot[5] * rot[7])
                - rot[1] * (rot[3] * rot[8] - rot[5] * rot[6])
                + rot[2] * (rot[3] * rot[7] - rot[4] * rot[6])
        };
        if (det - 1.0).abs() > 16.0 * ROTATION_TOL {
            return Err(GeometryError::InvalidRigidMotion(format!(
                "matrix must have determinant +1, got {det:.17}"
            )));
        }
        Ok(Self { dim, rot, trans })
    }

    pub fn identity(dim: usize) -> Self {
        let mut rot = vec![0.0; dim * dim];
        for i in 0..dim {
            rot[i * dim + i] = 1.0;
        }
        Self {
            dim,
            rot,
            trans: vec![0.0; dim],
        }
    }

    /// Planar rotation by `angle` about the origin composed with `trans`.
    pub fn planar(angle: f64, trans: [f64; 2]) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            dim: 2,
            rot: vec![c, -s, s, c],
            trans: trans.to_vec(),
        }
    }

    /// Pure translation.
    pub fn translation(trans: &[f64]) -> Self {
        let mut m = Self::identity(trans.len());
        m.trans.copy_from_slice(trans);
        m
    }

    /// Spatial rotation about the origin by the rotation vector `omega`
    /// (axis times angle), composed with `trans`.
    pub fn spatial(omega: [f64; 3], trans: [f64; 3]) -> Self {
        let angle = vecmath::norm(&omega);
        let mut rot = vec![0.0; 9];
        if angle < 1e-300 {
            rot[0] = 1.0;
            rot[4] = 1.0;
            rot[8] = 1.0;
        } else {
            let k = [omega[0] / angle, omega[1] / angle, omega[2] / angle];
            let (s, c) = angle.sin_cos();
            let v = 1.0 - c;
            // Rodrigues: R = c I + s [k]_x + v k k^T.
            rot[0] = c + v * k[0] * k[0];
            rot[1] = v * k[0] * k[1] - s * k[2];
            rot[2] = v * k[0] * k[2] + s * k[1];
            rot[3] = v * k[1] * k[0] + s * k[2];
            rot[4] = c + v * k[1] * k[1];
            rot[5] = v * k[1] * k[2] - s * k[0];
            rot[6] = v * k[2] * k[0] - s * k[1];
            rot[7] = v * k[2] * k[1] + s * k[0];
            rot[8] = c + v * k[2] * k[2];
        }
        Self {
            dim: 3,
            rot,
            trans: trans.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rotation(&self) -> &[f64] {
        &self.rot
    }

    pub fn translation_part(&self) -> &[f64] {
        &self.trans
    }

    /// Applies the motion to one point.
    pub fn apply_point(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let mut acc = self.trans[i];
            for j in 0..d {
                acc += self.rot[i * d + j] * x[j];
            }
            out[i] = acc;
        }
    }

    /// Applies the motion to every vertex of a polyline.
    pub fn apply(&self, p: &Polyline) -> Result<Polyline, GeometryError> {
        if p.dim() != self.dim {
            return Err(GeometryError::Mismatch(format!(
                "motion dimension {} vs curve dimension {}",
                self.dim,
                p.dim()
            )));
        }
        let d = self.dim;
        let mut coords = vec![0.0; p.coords.len()];
        for i in 0..p.num_vertices() {
            let (src, dst) = (p.vertex(i), &mut coords[i * d..(i + 1) * d]);
            for r in 0..d {
                let mut acc = self.trans[r];
                for c in 0..d {
                    acc += self.rot[r * d + c] * src[c];
                }
                dst[r] = acc;
            }
        }
        Polyline::new(d, coords)
    }

    /// Composition `self . other` (apply `other` first).
    pub fn compose(&self, other: &Self) -> Result<Self, GeometryError> {
        if self.dim != other.dim {
            return Err(GeometryError::Mismatch(
                "cannot compose motions of different dimension".into(),
            ));
        }
        let d = self.dim;
        let mut rot = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += self.rot[i * d + k] * other.rot[k * d + j];
                }
                rot[i * d + j] = acc;
            }
        }
        let mut trans = self.trans.clone();
        for i in 0..d {
            for j in 0..d {
                trans[i] += self.rot[i * d + j] * other.trans[j];
            }
        }
        Self::new(d, rot, trans)
    }

    /// The inverse motion.
    pub fn inverse(&self) -> Self {
        let d = self.dim;
        let mut rot = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                rot[i * d + j] = self.rot[j * d + i];
            }
        }
        let mut trans = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                trans[i] -= rot[i * d + j] * self.trans[j];
            }
        }
        Self { dim: d, rot, trans }
    }

    /// Rotation angle: the signed angle in 2D, the unsigned axis angle in 3D.
    pub fn rotation_angle(&self) -> f64 {
        if self.dim == 2 {
            self.rot[2].atan2(self.rot[0])
        } else {
            let tr = self.rot[0] + self.rot[4] + self.rot[8];
            ((tr - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
        }
    }
}

/// Result of rigidly registering one curve onto another.
#[derive(Debug, Clone)]
pub struct Registration {
    /// The optimal direct rigid motion.
    pub motion: RigidMotion,
    /// Weighted squared misfit of the registered midpoints.
    pub residual_energy: f64,
    /// Set when the weighted midpoint scatter left the rotation
    /// underdetermined; the returned motion is then a best-effort choice.
    pub rank_deficient: bool,
}

/// Finds the direct rigid motion minimizing the weighted squared distance
/// between the edge midpoints of `src`, moved, and those of `tgt`.
///
/// Weights are the edge lengths of the target frame, so the fit is a
/// discretization of a uniform line integral along the final shape. The
/// rotation comes from an SVD of the weighted cross-covariance; when its
/// determinant would be negative, the smallest singular direction is flipped
/// to stay in the direct group.
pub fn rigid_register(src: &Polyline, tgt: &Polyline) -> Result<Registration, GeometryError> {
    if src.dim() != tgt.dim() || src.num_vertices() != tgt.num_vertices() {
        return Err(GeometryError::Mismatch(
            "registration operands must share dimension and vertex count".into(),
        ));
    }
    let d = src.dim();
    let ne = src.num_edges();
    let weights = tgt.edge_data()?.lengths;
    let src_mid = src.midpoints();
    let tgt_mid = tgt.midpoints();

    let wsum: f64 = weights.iter().sum();
    let mut src_bar = vec![0.0; d];
    let mut tgt_bar = vec![0.0; d];
    for i in 0..ne {
        for c in 0..d {
            src_bar[c] += weights[i] * src_mid[i * d + c];
            tgt_bar[c] += weights[i] * tgt_mid[i * d + c];
        }
    }
    for c in 0..d {
        src_bar[c] /= wsum;
        tgt_bar[c] /= wsum;
    }

    // Weighted cross-covariance of centered midpoints: C = sum w (y - ybar)(x - xbar)^T.
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for i in 0..ne {
        for r in 0..d {
            for c in 0..d {
                cov[(r, c)] += weights[i]
                    * (tgt_mid[i * d + r] - tgt_bar[r])
                    * (src_mid[i * d + c] - src_bar[c]);
            }
        }
    }

    let svd = cov.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let sv = &svd.singular_values;

    let max_sv = sv.iter().cloned().fold(0.0_f64, f64::max);
    let rank = sv.iter().filter(|&&s| s > 1e-10 * max_sv.max(1e-300)).count();
    let rank_deficient = rank + 1 < d;

    let mut rot_mat = u * v_t;
    if rot_mat.determinant() < 0.0 {
        // Flip the singular direction with the smallest singular value.
        let mut min_idx = 0;
        for i in 1..d {
            if sv[i] < sv[min_idx] {
                min_idx = i;
            }
        }
        let mut u_fixed = u.clone();
        for r in 0..d {
            u_fixed[(r, min_idx)] = -u_fixed[(r, min_idx)];
        }
        rot_mat = u_fixed * v_t;
    }

    // Re-orthonormalize to absorb SVD roundoff before the strict constructor.
    let ortho = orthonormalize(&rot_mat);
    let mut rot = vec![0.0; d * d];
    for r in 0..d {
        for c in 0..d {
            rot[r * d + c] = ortho[(r, c)];
        }
    }
    let mut trans = vec![0.0; d];
    for r in 0..d {
        let mut acc = tgt_bar[r];
        for c in 0..d {
            acc -= rot[r * d + c] * src_bar[c];
        }
        trans[r] = acc;
    }
    let motion = RigidMotion::new(d, rot, trans)?;

    let mut residual_energy = 0.0;
    let mut moved = vec![0.0; d];
    for i in 0..ne {
        motion.apply_point(&src_mid[i * d..(i + 1) * d], &mut moved);
        let mut sq = 0.0;
        for c in 0..d {
            let r = moved[c] - tgt_mid[i * d + c];
            sq += r * r;
        }
        residual_energy += weights[i] * sq;
    }

    Ok(Registration {
        motion,
        residual_energy,
        rank_deficient,
    })
}

/// Nearest orthogonal matrix with positive determinant (polar factor).
fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let mut q = u * v_t;
    if q.determinant() < 0.0 {
        let mut u_fixed = u.clone();
        let d = m.nrows();
        let mut min_idx = 0;
        for i in 1..d {
            if svd.singular_values[i] < svd.singular_values[min_idx] {
                min_idx = i;
            }
        }
        for r in 0..d {
            u_fixed[(r, min_idx)] = -u_fixed[(r, min_idx)];
        }
        q = u_fixed * v_t;
    }
    q
}

/// A time-uniform sequence of `K + 1` regular frames with a shared vertex count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionPath {
    frames: Vec<Polyline>,
}

impl MotionPath {
    /// Validates frame compatibility (`K >= 1`, equal `N` and dimension,
    /// every frame regular).
    pub fn new(frames: Vec<Polyline>) -> Result<Self, GeometryError> {
        if frames.len() < 2 {
            return Err(GeometryError::InvalidPolyline(
                "a motion path needs at least two frames".into(),
            ));
        }
        let dim = frames[0].dim();
        let n = frames[0].num_vertices();
        for (k, f) in frames.iter().enumerate() {
            if f.dim() != dim || f.num_vertices() != n {
                return Err(GeometryError::Mismatch(format!(
                    "frame {k} does not match the leading frame layout"
                )));
            }
            f.validate_regular()?;
        }
        Ok(Self { frames })
    }

    /// Number of time intervals `K`.
    pub fn intervals(&self) -> usize {
        self.frames.len() - 1
    }

    /// Uniform time step `1 / K` on the unit interval.
    pub fn tau(&self) -> f64 {
        1.0 / self.intervals() as f64
    }

    pub fn dim(&self) -> usize {
        self.frames[0].dim()
    }

    pub fn num_vertices(&self) -> usize {
        self.frames[0].num_vertices()
    }

    pub fn frames(&self) -> &[Polyline] {
        &self.frames
    }

    pub fn frame(&self, k: usize) -> &Polyline {
        &self.frames[k]
    }

    pub fn into_frames(self) -> Vec<Polyline> {
        self.frames
    }

    /// Flat coordinates of all frames, frame-major then vertex-major.
    pub fn to_flat(&self) -> DVector<f64> {
        let nd = self.num_vertices() * self.dim();
        let mut out = DVector::zeros(self.frames.len() * nd);
        for (k, f) in self.frames.iter().enumerate() {
            out.as_mut_slice()[k * nd..(k + 1) * nd].copy_from_slice(f.coords());
        }
        out
    }

    /// Rebuilds a path from flat coordinates laid out as in [`Self::to_flat`].
    /// Frames are not required to be regular here; callers validate when needed.
    pub fn from_flat_unchecked(dim: usize, n: usize, flat: &[f64]) -> Self {
        let nd = n * dim;
        let frames = flat
            .chunks_exact(nd)
            .map(|c| Polyline {
                dim,
                coords: c.to_vec(),
            })
            .collect();
        Self { frames }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn zigzag() -> Polyline {
        Polyline::from_points_2d(&[[0.0, 0.0], [1.0, 0.3], [1.8, -0.2], [2.5, 0.4], [3.3, 0.1]])
            .unwrap()
    }

    #[test]
    fn polyline_rejects_bad_input() {
        assert!(Polyline::new(4, vec![0.0; 8]).is_err());
        assert!(Polyline::new(2, vec![0.0; 3]).is_err());
        assert!(Polyline::new(2, vec![0.0, 0.0]).is_err());
        assert!(Polyline::new(2, vec![0.0, 0.0, f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn repeated_vertex_is_degenerate() {
        let p = Polyline::from_points_2d(&[[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]).unwrap();
        match p.edge_data() {
            Err(GeometryError::DegenerateEdge { edge, .. }) => assert_eq!(edge, 0),
            other => panic!("expected degenerate edge, got {other:?}"),
        }
        assert!(!p.is_regular());
    }

    #[test]
    fn degeneracy_tolerance_scales_with_extent() {
        let small = Polyline::from_points_2d(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        assert_abs_diff_eq!(small.degeneracy_tolerance(), 1e-10, epsilon = 1e-24);
        let big = Polyline::from_points_2d(&[[0.0, 0.0], [4e3, 3e3]]).unwrap();
        assert_abs_diff_eq!(big.degeneracy_tolerance(), 5e-7, epsilon = 1e-18);
    }

    #[test]
    fn left_turn_is_positive() {
        let p = Polyline::from_points_2d(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]).unwrap();
        let angles = p.turning_angles().unwrap();
        assert_eq!(angles.len(), 1);
        assert_relative_eq!(angles[0], std::f64::consts::FRAC_PI_2, max_relative = 1e-15);
    }

    #[test]
    fn spatial_angles_unsigned() {
        let p = Polyline::from_points_3d(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, -1.0, 0.0]])
            .unwrap();
        let angles = p.turning_angles().unwrap();
        assert_relative_eq!(angles[0], std::f64::consts::FRAC_PI_2, max_relative = 1e-15);
        let q = Polyline::from_points_3d(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.7]])
            .unwrap();
        assert!(q.turning_angles().unwrap()[0] > 0.0);
    }

    #[test]
    fn v_shape_centroid() {
        let p = Polyline::from_points_2d(&[[-1.0, 1.0], [0.0, 0.0], [1.0, 1.0]]).unwrap();
        let c = p.centroid().unwrap();
        assert_abs_diff_eq!(c[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn centroid_invariant_under_subdivision() {
        let p = Polyline::from_points_2d(&[[0.0, 0.0], [2.0, 0.0], [2.0, 2.0]]).unwrap();
        let q = Polyline::from_points_2d(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [2.0, 1.0], [2.0, 2.0]])
            .unwrap();
        let cp = p.centroid().unwrap();
        let cq = q.centroid().unwrap();
        assert_abs_diff_eq!(cp[0], cq[0], epsilon = 1e-14);
        assert_abs_diff_eq!(cp[1], cq[1], epsilon = 1e-14);
    }

    #[test]
    fn rigid_motion_rejects_improper_matrices() {
        // Reflection: determinant -1.
        assert!(RigidMotion::new(2, vec![1.0, 0.0, 0.0, -1.0], vec![0.0, 0.0]).is_err());
        // Not orthogonal.
        assert!(RigidMotion::new(2, vec![1.0, 0.1, 0.0, 1.0], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn compose_then_inverse_is_identity() {
        let g = RigidMotion::planar(0.7, [1.0, -2.0]);
        let h = RigidMotion::planar(-1.3, [0.3, 0.4]);
        let gh = g.compose(&h).unwrap();
        let back = gh.inverse().compose(&gh).unwrap();
        for (a, b) in back.rotation().iter().zip(RigidMotion::identity(2).rotation()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
        for t in back.translation_part() {
            assert_abs_diff_eq!(*t, 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn spatial_rotation_angle_roundtrip() {
        let g = RigidMotion::spatial([0.0, 0.0, 0.9], [0.0, 0.0, 0.0]);
        assert_relative_eq!(g.rotation_angle(), 0.9, max_relative = 1e-12);
    }

    #[test]
    fn registration_recovers_planted_motion() {
        let p = zigzag();
        let g = RigidMotion::planar(0.6, [0.4, -1.1]);
        let q = g.apply(&p).unwrap();
        let reg = rigid_register(&p, &q).unwrap();
        assert!(!reg.rank_deficient);
        assert_abs_diff_eq!(reg.residual_energy, 0.0, epsilon = 1e-24);
        for (a, b) in reg.motion.rotation().iter().zip(g.rotation()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        for (a, b) in reg.motion.translation_part().iter().zip(g.translation_part()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn registration_recovers_planted_motion_3d() {
        let p = Polyline::from_points_3d(&[
            [0.0, 0.0, 0.0],
            [1.0, 0.2, -0.1],
            [1.9, -0.3, 0.4],
            [2.7, 0.5, 0.2],
        ])
        .unwrap();
        let g = RigidMotion::spatial([0.3, -0.5, 0.8], [0.2, 0.1, -0.7]);
        let q = g.apply(&p).unwrap();
        let reg = rigid_register(&p, &q).unwrap();
        assert!(!reg.rank_deficient);
        assert_abs_diff_eq!(reg.residual_energy, 0.0, epsilon = 1e-22);
        for (a, b) in reg.motion.rotation().iter().zip(g.rotation()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-11);
        }
    }

    /// Independent check: exhaustive scan over the planar rotation angle with
    /// the translation eliminated in closed form per angle.
    fn brute_force_register_energy_2d(src: &Polyline, tgt: &Polyline) -> f64 {
        let w = tgt.edge_data().unwrap().lengths;
        let sm = src.midpoints();
        let tm = tgt.midpoints();
        let ne = w.len();
        let wsum: f64 = w.iter().sum();
        let mut best = f64::INFINITY;
        let steps = 62_832; // ~1e-4 rad resolution
        for s in 0..steps {
            let th = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * s as f64 / steps as f64;
            let (sn, cs) = th.sin_cos();
            let mut bar = [0.0, 0.0];
            for i in 0..ne {
                let rx = cs * sm[2 * i] - sn * sm[2 * i + 1];
                let ry = sn * sm[2 * i] + cs * sm[2 * i + 1];
                bar[0] += w[i] * (tm[2 * i] - rx);
                bar[1] += w[i] * (tm[2 * i + 1] - ry);
            }
            bar[0] /= wsum;
            bar[1] /= wsum;
            let mut energy = 0.0;
            for i in 0..ne {
                let rx = cs * sm[2 * i] - sn * sm[2 * i + 1] + bar[0];
                let ry = sn * sm[2 * i] + cs * sm[2 * i + 1] + bar[1];
                let (dx, dy) = (rx - tm[2 * i], ry - tm[2 * i + 1]);
                energy += w[i] * (dx * dx + dy * dy);
            }
            best = best.min(energy);
        }
        best
    }

    #[test]
    fn registration_energy_matches_angle_scan() {
        let p = zigzag();
        // A target that is not a rigid image of the source, so the optimum
        // has strictly positive misfit.
        let q = Polyline::from_points_2d(&[
            [0.1, 0.9],
            [1.2, 1.4],
            [2.2, 0.8],
            [2.7, 1.6],
            [3.6, 1.5],
        ])
        .unwrap();
        let reg = rigid_register(&p, &q).unwrap();
        let brute = brute_force_register_energy_2d(&p, &q);
        assert!(reg.residual_energy > 1e-3);
        assert!(reg.residual_energy <= brute + 1e-6);
        assert_abs_diff_eq!(reg.residual_energy, brute, epsilon = 1e-6);
    }

    #[test]
    fn registration_flags_rank_deficiency() {
        // Two vertices give a single midpoint: zero scatter in 2D.
        let p = Polyline::from_points_2d(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let q = Polyline::from_points_2d(&[[2.0, 1.0], [3.0, 1.0]]).unwrap();
        let reg = rigid_register(&p, &q).unwrap();
        assert!(reg.rank_deficient);

        // Collinear spatial midpoints leave one rotation free.
        let a = Polyline::from_points_3d(&[
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [2.0, 0.0, 0.0],
            [3.0, 0.0, 0.0],
        ])
        .unwrap();
        let reg3 = rigid_register(&a, &a).unwrap();
        assert!(reg3.rank_deficient);

        // A genuinely planar spread in 3D is fine.
        let b = Polyline::from_points_3d(&[
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.5, 0.0],
        ])
        .unwrap();
        assert!(!rigid_register(&b, &b).unwrap().rank_deficient);
    }

    #[test]
    fn motion_path_validates_frames() {
        let a = zigzag();
        assert!(MotionPath::new(vec![a.clone()]).is_err());
        let b = Polyline::from_points_2d(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        assert!(MotionPath::new(vec![a.clone(), b]).is_err());
        let path = MotionPath::new(vec![a.clone(), a.clone(), a.clone()]).unwrap();
        assert_eq!(path.intervals(), 2);
        assert_abs_diff_eq!(path.tau(), 0.5);
        let flat = path.to_flat();
        let back = MotionPath::from_flat_unchecked(2, a.num_vertices(), flat.as_slice());
        assert_eq!(back, path);
    }

    proptest! {
        #[test]
        fn rigid_invariance_of_lengths_and_angles(
            angle in -3.0f64..3.0,
            tx in -5.0f64..5.0,
            ty in -5.0f64..5.0,
        ) {
            let p = zigzag();
            let g = RigidMotion::planar(angle, [tx, ty]);
            let q = g.apply(&p).unwrap();
            let (la, lb) = (p.edge_data().unwrap().lengths, q.edge_data().unwrap().lengths);
            for (a, b) in la.iter().zip(lb.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let (ta, tb) = (p.turning_angles().unwrap(), q.turning_angles().unwrap());
            for (a, b) in ta.iter().zip(tb.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let (ca, cb) = (p.centroid().unwrap(), q.centroid().unwrap());
            let mut moved = [0.0, 0.0];
            g.apply_point(&ca, &mut moved);
            prop_assert!((moved[0] - cb[0]).abs() < 1e-12);
            prop_assert!((moved[1] - cb[1]).abs() < 1e-12);
        }

        #[test]
        fn reflection_negates_turning_angles(seed_y in 0.05f64..0.8) {
            let p = Polyline::from_points_2d(&[
                [0.0, 0.0],
                [1.0, seed_y],
                [2.0, -0.3],
                [3.0, seed_y * 0.5],
            ]).unwrap();
            let mut mirrored = p.clone();
            for i in 0..mirrored.num_vertices() {
                mirrored.coords_mut()[2 * i + 1] *= -1.0;
            }
            let a = p.turning_angles().unwrap();
            let b = mirrored.turning_angles().unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x + y).abs() < 1e-12);
            }
        }

        #[test]
        fn registration_beats_identity(
            angle in -0.5f64..0.5,
            tx in -1.0f64..1.0,
        ) {
            let p = zigzag();
            let g = RigidMotion::planar(angle, [tx, 0.3]);
            let mut q = g.apply(&p).unwrap();
            // Small non-rigid wobble so the optimum is nontrivial.
            for i in 0..q.num_vertices() {
                q.coords_mut()[2 * i + 1] += 0.01 * (i as f64).sin();
            }
            let reg = rigid_register(&p, &q).unwrap();
            // The optimal motion cannot do worse than the planted one.
            let planted = {
                let moved = g.apply(&p).unwrap();
                let w = q.edge_data().unwrap().lengths;
                let mm = moved.midpoints();
                let qm = q.midpoints();
                let mut e = 0.0;
                for i in 0..w.len() {
                    let dx = mm[2 * i] - qm[2 * i];
                    let dy = mm[2 * i + 1] - qm[2 * i + 1];
                    e += w[i] * (dx * dx + dy * dy);
                }
                e
            };
            prop_assert!(reg.residual_energy <= planted + 1e-12);
        }
    }
}
