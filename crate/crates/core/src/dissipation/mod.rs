//! Dissipation energies of motion paths and their exact derivatives.
//!
//! Moving a frame `p_k` to `p_{k+1}` costs two kinds of energy. The outer
//! (drag) part pushes edge midpoints through the surrounding medium against
//! the anisotropic drag tensor of each edge, averaged over the two frames of
//! the interval. The inner (shape-change) part charges relative edge
//! stretching and turning-angle changes. With `K` intervals on the unit time
//! horizon, midpoint velocities carry a factor `K = 1 / tau`, and each
//! interval sum carries the quadrature weight `tau`, so both pair energies
//! scale linearly in `K` at fixed displacement per step.
//!
//! The total energy of a path is half the sum of outer and inner interval
//! energies. Gradients are reported for every coordinate, including frames a
//! solver may hold fixed; masking is the solver's concern.

pub(crate) mod kernels;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, MotionPath, Polyline};
use crate::sparse::BlockTridiagMatrix;
use crate::window::{scatter_grad, scatter_hess, WGrad, WHess};
use kernels::{
    angle_bundle_2d, angle_bundle_3d, drag_matrix, length_grad, length_hess, pad, pair_form,
    DragParams, V3,
};

#[derive(Debug, Clone, Error)]
pub enum DissipationError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("parameters sized for {expected} edges, curve has {actual}")]
    EdgeCountMismatch { expected: usize, actual: usize },
    #[error("frame {frame}: {source}")]
    FrameGeometry {
        frame: usize,
        source: GeometryError,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Per-edge drag coefficients of the outer energy.
///
/// `eps` in `(0, 1]` is the tangential-to-normal drag ratio (1 is isotropic);
/// `weights` are positive scale factors, e.g. from a thickness profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterParams {
    eps: Vec<f64>,
    weights: Vec<f64>,
}

impl OuterParams {
    pub fn new(eps: Vec<f64>, weights: Vec<f64>) -> Result<Self, DissipationError> {
        if eps.len() != weights.len() {
            return Err(DissipationError::InvalidParameter(format!(
                "eps has {} entries, weights has {}",
                eps.len(),
                weights.len()
            )));
        }
        if eps.is_empty() {
            return Err(DissipationError::InvalidParameter(
                "at least one edge is required".into(),
            ));
        }
        for (i, &e) in eps.iter().enumerate() {
            if !(e > 0.0 && e <= 1.0) || !e.is_finite() {
                return Err(DissipationError::InvalidParameter(format!(
                    "eps[{i}] = {e} must lie in (0, 1]"
                )));
            }
        }
        for (i, &w) in weights.iter().enumerate() {
            if !(w > 0.0) || !w.is_finite() {
                return Err(DissipationError::InvalidParameter(format!(
                    "weights[{i}] = {w} must be positive"
                )));
            }
        }
        Ok(Self { eps, weights })
    }

    /// Uniform anisotropy with unit weights.
    pub fn uniform(num_edges: usize, eps: f64) -> Result<Self, DissipationError> {
        Self::new(vec![eps; num_edges], vec![1.0; num_edges])
    }

    pub fn num_edges(&self) -> usize {
        self.eps.len()
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn edge(&self, i: usize) -> DragParams {
        DragParams {
            eps: self.eps[i],
            weight: self.weights[i],
        }
    }
}

/// Nonnegative weights of the inner (shape-change) energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerParams {
    pub sigma_bend: f64,
    pub sigma_strain: f64,
}

impl InnerParams {
    pub fn new(sigma_bend: f64, sigma_strain: f64) -> Result<Self, DissipationError> {
        if !(sigma_bend >= 0.0) || !sigma_bend.is_finite() {
            return Err(DissipationError::InvalidParameter(format!(
                "sigma_bend = {sigma_bend} must be a finite nonnegative number"
            )));
        }
        if !(sigma_strain >= 0.0) || !sigma_strain.is_finite() {
            return Err(DissipationError::InvalidParameter(format!(
                "sigma_strain = {sigma_strain} must be a finite nonnegative number"
            )));
        }
        Ok(Self {
            sigma_bend,
            sigma_strain,
        })
    }

    pub fn zero() -> Self {
        Self {
            sigma_bend: 0.0,
            sigma_strain: 0.0,
        }
    }
}

/// Full parameter bundle of the dissipation energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipationParams {
    pub outer: OuterParams,
    pub inner: InnerParams,
}

impl DissipationParams {
    pub fn uniform(
        num_edges: usize,
        eps: f64,
        sigma_bend: f64,
        sigma_strain: f64,
    ) -> Result<Self, DissipationError> {
        Ok(Self {
            outer: OuterParams::uniform(num_edges, eps)?,
            inner: InnerParams::new(sigma_bend, sigma_strain)?,
        })
    }
}

/// Dissipation of one time interval, split into its two parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalDissipation {
    pub outer: f64,
    pub inner: f64,
    pub total: f64,
}

/// The drag tensor of edge `i`: `w * l * (I + (eps - 1) T T^T)`, with
/// tangential eigenvalue `w * l * eps` and normal eigenvalue `w * l`.
pub fn edge_drag_tensor(
    p: &Polyline,
    edge: usize,
    eps: f64,
    weight: f64,
) -> Result<DMatrix<f64>, DissipationError> {
    if edge >= p.num_edges() {
        return Err(DissipationError::InvalidParameter(format!(
            "edge index {edge} out of range for {} edges",
            p.num_edges()
        )));
    }
    let single = OuterParams::new(vec![eps], vec![weight])?;
    p.validate_regular()?;
    let d = p.dim();
    let e = {
        let mut out = [0.0; 3];
        let (a, b) = (p.vertex(edge), p.vertex(edge + 1));
        for c in 0..d {
            out[c] = b[c] - a[c];
        }
        out
    };
    let m = drag_matrix(d, &e, single.edge(0));
    let mut out = DMatrix::zeros(d, d);
    for r in 0..d {
        for c in 0..d {
            out[(r, c)] = m[r][c];
        }
    }
    Ok(out)
}

/// What the path evaluator should produce besides the scalar energy.
pub(crate) struct EvalRequest<'a> {
    pub grad: Option<&'a mut DVector<f64>>,
    pub hess: Option<&'a mut BlockTridiagMatrix>,
    pub per_interval: Option<&'a mut Vec<(f64, f64)>>,
}

impl<'a> EvalRequest<'a> {
    pub fn value_only() -> Self {
        Self {
            grad: None,
            hess: None,
            per_interval: None,
        }
    }
}

/// Evaluates the total energy `E = (outer + inner) / 2` on flat coordinates,
/// with optional gradient, Hessian, and raw per-interval records.
///
/// `scale_intervals` is the time-step count `K` entering velocity and
/// quadrature factors; it equals the frame count minus one for whole paths
/// but is caller-chosen when scoring a single pair of frames.
pub(crate) fn eval_path(
    dim: usize,
    n: usize,
    flat: &[f64],
    scale_intervals: usize,
    params: &DissipationParams,
    mut req: EvalRequest<'_>,
) -> Result<f64, DissipationError> {
    let ne = n - 1;
    let frames = flat.len() / (n * dim);
    debug_assert_eq!(flat.len(), frames * n * dim);
    if params.outer.num_edges() != ne {
        return Err(DissipationError::EdgeCountMismatch {
            expected: params.outer.num_edges(),
            actual: ne,
        });
    }
    let kf = scale_intervals as f64;

    validate_frames_regular(dim, n, flat)?;

    if let Some(g) = req.grad.as_deref_mut() {
        debug_assert_eq!(g.len(), flat.len());
        g.fill(0.0);
    }

    let idx = |k: usize, i: usize| (k * n + i) * dim;
    let vert = |k: usize, i: usize| -> V3 { pad(dim, &flat[idx(k, i)..idx(k, i) + dim]) };

    let sb = params.inner.sigma_bend;
    let ss = params.inner.sigma_strain;
    let want_h = req.hess.is_some();
    let want_g = req.grad.is_some() || want_h;

    // Chain maps over the four-point interval window [a0, a1, b0, b1].
    const EA: [(usize, f64); 2] = [(0, -1.0), (1, 1.0)];
    const EB: [(usize, f64); 2] = [(2, -1.0), (3, 1.0)];
    const U: [(usize, f64); 4] = [(0, -0.5), (1, -0.5), (2, 0.5), (3, 0.5)];

    let mut total = 0.0;
    for k in 0..frames - 1 {
        let mut outer_k = 0.0;
        let mut inner_k = 0.0;

        for i in 0..ne {
            let a0 = vert(k, i);
            let a1 = vert(k, i + 1);
            let b0 = vert(k + 1, i);
            let b1 = vert(k + 1, i + 1);
            let mut ea = [0.0; 3];
            let mut eb = [0.0; 3];
            let mut u = [0.0; 3];
            for c in 0..dim {
                ea[c] = a1[c] - a0[c];
                eb[c] = b1[c] - b0[c];
                u[c] = 0.5 * (b0[c] + b1[c] - a0[c] - a1[c]);
            }
            let points = [(k, i), (k, i + 1), (k + 1, i), (k + 1, i + 1)];
            let par = params.outer.edge(i);

            // Outer drag part: kf * (w / 2) * (f(ea, u) + f(eb, u)).
            let fa = pair_form(dim, &ea, &u, par.eps, want_h);
            let fb = pair_form(dim, &eb, &u, par.eps, want_h);
            outer_k += kf * par.weight * 0.5 * (fa.value + fb.value);

            // Inner strain part: kf * sigma_strain * (1 - lb/la)^2.
            let (la, ta) = length_grad(dim, &ea);
            let (lb, tb) = length_grad(dim, &eb);
            let ratio = lb / la;
            if ss > 0.0 {
                inner_k += kf * ss * (1.0 - ratio) * (1.0 - ratio);
            }

            if want_g {
                // Energy contributions carry the global 1/2.
                let co = 0.5 * kf * par.weight * 0.5;
                let mut wg = WGrad::new(dim);
                wg.add(&EA, &fa.de, co);
                wg.add(&EB, &fb.de, co);
                wg.add(&U, &fa.du, co);
                wg.add(&U, &fb.du, co);

                let cs = 0.5 * kf * ss;
                if ss > 0.0 {
                    let dphi_da = 2.0 * (1.0 - ratio) * ratio / la;
                    let dphi_db = -2.0 * (1.0 - ratio) / la;
                    wg.add(&EA, &ta, cs * dphi_da);
                    wg.add(&EB, &tb, cs * dphi_db);
                }

                if let Some(h) = req.hess.as_deref_mut() {
                    let mut wh = WHess::new(dim);
                    wh.add_mat(&EA, &EA, &fa.dede, co, false);
                    wh.add_mat(&EA, &U, &fa.dedu, co, false);
                    wh.add_mat(&U, &EA, &fa.dedu, co, true);
                    wh.add_mat(&U, &U, &fa.dudu, co, false);
                    wh.add_mat(&EB, &EB, &fb.dede, co, false);
                    wh.add_mat(&EB, &U, &fb.dedu, co, false);
                    wh.add_mat(&U, &EB, &fb.dedu, co, true);
                    wh.add_mat(&U, &U, &fb.dudu, co, false);

                    if ss > 0.0 {
                        let dphi_da = 2.0 * (1.0 - ratio) * ratio / la;
                        let dphi_db = -2.0 * (1.0 - ratio) / la;
                        let d2_aa = 2.0 * ratio * (3.0 * ratio - 2.0) / (la * la);
                        let d2_bb = 2.0 / (la * la);
                        let d2_ab = 2.0 * (1.0 - 2.0 * ratio) / (la * la);
                        wh.add_outer(&EA, &ta, &EA, &ta, cs * d2_aa);
                        wh.add_outer(&EB, &tb, &EB, &tb, cs * d2_bb);
                        wh.add_outer(&EA, &ta, &EB, &tb, cs * d2_ab);
                        wh.add_outer(&EB, &tb, &EA, &ta, cs * d2_ab);
                        wh.add_mat(&EA, &EA, &length_hess(dim, &ea), cs * dphi_da, false);
                        wh.add_mat(&EB, &EB, &length_hess(dim, &eb), cs * dphi_db, false);
                    }
                    scatter_hess(&points, dim, n, &wh, h);
                }
                if let Some(g) = req.grad.as_deref_mut() {
                    scatter_grad(&points, dim, n, &wg, g);
                }
            }
        }

        // Inner bending part: kf * sigma_bend * (theta_b - theta_a)^2 / la,
        // weighted by the earlier-frame length of the incoming edge.
        if sb > 0.0 && n >= 3 {
            for j in 0..n - 2 {
                let pa = [vert(k, j), vert(k, j + 1), vert(k, j + 2)];
                let pb = [vert(k + 1, j), vert(k + 1, j + 1), vert(k + 1, j + 2)];
                let mut ua = [0.0; 3];
                let mut va = [0.0; 3];
                let mut ub = [0.0; 3];
                let mut vb = [0.0; 3];
                for c in 0..dim {
                    ua[c] = pa[1][c] - pa[0][c];
                    va[c] = pa[2][c] - pa[1][c];
                    ub[c] = pb[1][c] - pb[0][c];
                    vb[c] = pb[2][c] - pb[1][c];
                }
                let (ba, bb) = if dim == 2 {
                    (angle_bundle_2d(&ua, &va, want_h), angle_bundle_2d(&ub, &vb, want_h))
                } else {
                    (angle_bundle_3d(&ua, &va, want_h), angle_bundle_3d(&ub, &vb, want_h))
                };
                let (la, ta) = length_grad(dim, &ua);
                let dth = bb.theta - ba.theta;
                inner_k += kf * sb * dth * dth / la;

                if want_g {
                    let cb = 0.5 * kf * sb;
                    let points = [
                        (k, j),
                        (k, j + 1),
                        (k, j + 2),
                        (k + 1, j),
                        (k + 1, j + 1),
                        (k + 1, j + 2),
                    ];
                    const UA: [(usize, f64); 2] = [(0, -1.0), (1, 1.0)];
                    const VA: [(usize, f64); 2] = [(1, -1.0), (2, 1.0)];
                    const UB: [(usize, f64); 2] = [(3, -1.0), (4, 1.0)];
                    const VB: [(usize, f64); 2] = [(4, -1.0), (5, 1.0)];

                    let d_thb = 2.0 * cb * dth / la;
                    let d_tha = -d_thb;
                    let d_la = -cb * dth * dth / (la * la);

                    let mut wg = WGrad::new(dim);
                    wg.add(&UA, &ba.du, d_tha);
                    wg.add(&VA, &ba.dv, d_tha);
                    wg.add(&UB, &bb.du, d_thb);
                    wg.add(&VB, &bb.dv, d_thb);
                    wg.add(&UA, &ta, d_la);

                    if let Some(h) = req.hess.as_deref_mut() {
                        let mut wh = WHess::new(dim);
                        // Window gradients of theta_a, theta_b, la as V3 chains.
                        let th_a_chain: [(&[(usize, f64)], &V3); 2] =
                            [(&UA, &ba.du), (&VA, &ba.dv)];
                        let th_b_chain: [(&[(usize, f64)], &V3); 2] =
                            [(&UB, &bb.du), (&VB, &bb.dv)];
                        let la_chain: [(&[(usize, f64)], &V3); 1] = [(&UA, &ta)];

                        let pair = |wh: &mut WHess,
                                    xa: &[(&[(usize, f64)], &V3)],
                                    xb: &[(&[(usize, f64)], &V3)],
                                    s: f64| {
                            for (ca, va) in xa {
                                for (cb2, vb2) in xb {
                                    wh.add_outer(ca, va, cb2, vb2, s);
                                }
                            }
                        };
                        // Second derivatives of the scalar head D^2 / la.
                        pair(&mut wh, &th_a_chain, &th_a_chain, 2.0 * cb / la);
                        pair(&mut wh, &th_b_chain, &th_b_chain, 2.0 * cb / la);
                        pair(&mut wh, &th_a_chain, &th_b_chain, -2.0 * cb / la);
                        pair(&mut wh, &th_b_chain, &th_a_chain, -2.0 * cb / la);
                        pair(&mut wh, &th_a_chain, &la_chain, 2.0 * cb * dth / (la * la));
                        pair(&mut wh, &la_chain, &th_a_chain, 2.0 * cb * dth / (la * la));
                        pair(&mut wh, &th_b_chain, &la_chain, -2.0 * cb * dth / (la * la));
                        pair(&mut wh, &la_chain, &th_b_chain, -2.0 * cb * dth / (la * la));
                        pair(&mut wh, &la_chain, &la_chain, 2.0 * cb * dth * dth / (la * la * la));

                        // Curvature of the inner maps.
                        let add_angle_hess = |wh: &mut WHess, b: &kernels::AngleBundle, uc: &[(usize, f64)], vc: &[(usize, f64)], s: f64| {
                            wh.add_mat(uc, uc, &b.duu, s, false);
                            wh.add_mat(vc, vc, &b.dvv, s, false);
                            wh.add_mat(uc, vc, &b.duv, s, false);
                            wh.add_mat(vc, uc, &b.duv, s, true);
                        };
                        add_angle_hess(&mut wh, &ba, &UA, &VA, d_tha);
                        add_angle_hess(&mut wh, &bb, &UB, &VB, d_thb);
                        wh.add_mat(&UA, &UA, &length_hess(dim, &ua), d_la, false);

                        scatter_hess(&points, dim, n, &wh, h);
                    }
                    if let Some(g) = req.grad.as_deref_mut() {
                        scatter_grad(&points, dim, n, &wg, g);
                    }
                }
            }
        }

        total += 0.5 * (outer_k + inner_k);
        if let Some(rec) = req.per_interval.as_deref_mut() {
            rec.push((outer_k, inner_k));
        }
    }
    Ok(total)
}

pub(crate) fn validate_frames_regular(
    dim: usize,
    n: usize,
    flat: &[f64],
) -> Result<(), DissipationError> {
    let frames = flat.len() / (n * dim);
    for k in 0..frames {
        let coords = &flat[k * n * dim..(k + 1) * n * dim];
        // Bounding-box diameter for the frame-local tolerance.
        let mut sq = 0.0;
        for c in 0..dim {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for i in 0..n {
                let v = coords[i * dim + c];
                if !v.is_finite() {
                    return Err(DissipationError::FrameGeometry {
                        frame: k,
                        source: GeometryError::InvalidPolyline(
                            "coordinates must be finite".into(),
                        ),
                    });
                }
                lo = lo.min(v);
                hi = hi.max(v);
            }
            sq += (hi - lo) * (hi - lo);
        }
        let tol = 1e-10 * sq.sqrt().max(1.0);
        for i in 0..n - 1 {
            let mut esq = 0.0;
            for c in 0..dim {
                let e = coords[(i + 1) * dim + c] - coords[i * dim + c];
                esq += e * e;
            }
            let len = esq.sqrt();
            if len <= tol {
                return Err(DissipationError::FrameGeometry {
                    frame: k,
                    source: GeometryError::DegenerateEdge {
                        edge: i,
                        length: len,
                        tolerance: tol,
                    },
                });
            }
        }
    }
    Ok(())
}

fn pair_flat(a: &Polyline, b: &Polyline) -> Result<(usize, usize, Vec<f64>), DissipationError> {
    if a.dim() != b.dim() || a.num_vertices() != b.num_vertices() {
        return Err(DissipationError::Geometry(GeometryError::Mismatch(
            "pair frames must share dimension and vertex count".into(),
        )));
    }
    let mut flat = Vec::with_capacity(2 * a.coords().len());
    flat.extend_from_slice(a.coords());
    flat.extend_from_slice(b.coords());
    Ok((a.dim(), a.num_vertices(), flat))
}

/// Drag energy of moving frame `a` to frame `b` in one of `intervals` steps.
pub fn outer_pair_energy(
    a: &Polyline,
    b: &Polyline,
    outer: &OuterParams,
    intervals: usize,
) -> Result<f64, DissipationError> {
    let (dim, n, flat) = pair_flat(a, b)?;
    let params = DissipationParams {
        outer: outer.clone(),
        inner: InnerParams::zero(),
    };
    let mut rec = Vec::new();
    eval_path(
        dim,
        n,
        &flat,
        intervals.max(1),
        &params,
        EvalRequest {
            grad: None,
            hess: None,
            per_interval: Some(&mut rec),
        },
    )?;
    Ok(rec[0].0)
}

/// Shape-change energy of moving frame `a` to frame `b` in one of
/// `intervals` steps.
pub fn inner_pair_energy(
    a: &Polyline,
    b: &Polyline,
    inner: &InnerParams,
    intervals: usize,
) -> Result<f64, DissipationError> {
    let (dim, n, flat) = pair_flat(a, b)?;
    let params = DissipationParams {
        outer: OuterParams::uniform(n - 1, 1.0)?,
        inner: *inner,
    };
    let mut rec = Vec::new();
    eval_path(
        dim,
        n,
        &flat,
        intervals.max(1),
        &params,
        EvalRequest {
            grad: None,
            hess: None,
            per_interval: Some(&mut rec),
        },
    )?;
    Ok(rec[0].1)
}

/// Total path energy: half the sum of outer and inner interval energies.
pub fn total_energy(path: &MotionPath, params: &DissipationParams) -> Result<f64, DissipationError> {
    let flat = path.to_flat();
    eval_path(
        path.dim(),
        path.num_vertices(),
        flat.as_slice(),
        path.intervals(),
        params,
        EvalRequest::value_only(),
    )
}

/// Exact gradient of [`total_energy`] with respect to every vertex
/// coordinate, ordered frame-major.
pub fn energy_gradient(
    path: &MotionPath,
    params: &DissipationParams,
) -> Result<DVector<f64>, DissipationError> {
    let flat = path.to_flat();
    let mut grad = DVector::zeros(flat.len());
    eval_path(
        path.dim(),
        path.num_vertices(),
        flat.as_slice(),
        path.intervals(),
        params,
        EvalRequest {
            grad: Some(&mut grad),
            hess: None,
            per_interval: None,
        },
    )?;
    Ok(grad)
}

/// Exact Hessian of [`total_energy`], block-tridiagonal over frames.
pub fn energy_hessian(
    path: &MotionPath,
    params: &DissipationParams,
) -> Result<BlockTridiagMatrix, DissipationError> {
    let flat = path.to_flat();
    let nd = path.num_vertices() * path.dim();
    let mut grad = DVector::zeros(flat.len());
    let mut hess = BlockTridiagMatrix::zeros(path.intervals() + 1, nd);
    eval_path(
        path.dim(),
        path.num_vertices(),
        flat.as_slice(),
        path.intervals(),
        params,
        EvalRequest {
            grad: Some(&mut grad),
            hess: Some(&mut hess),
            per_interval: None,
        },
    )?;
    Ok(hess)
}

/// Per-interval dissipation records; outer and inner sums reproduce the
/// interval energies and totals sum to twice the path energy.
pub fn dissipation_timeseries(
    path: &MotionPath,
    params: &DissipationParams,
) -> Result<Vec<IntervalDissipation>, DissipationError> {
    let flat = path.to_flat();
    let mut rec = Vec::with_capacity(path.intervals());
    eval_path(
        path.dim(),
        path.num_vertices(),
        flat.as_slice(),
        path.intervals(),
        params,
        EvalRequest {
            grad: None,
            hess: None,
            per_interval: Some(&mut rec),
        },
    )?;
    Ok(rec
        .into_iter()
        .map(|(outer, inner)| IntervalDissipation {
            outer,
            inner,
            total: outer + inner,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(points: &[[f64; 2]]) -> Polyline {
        Polyline::from_points_2d(points).unwrap()
    }

    /// Straight-from-the-definition evaluator built on curve-level queries,
    /// sharing no code with the kernel assembly.
    fn naive_total_energy(path: &MotionPath, params: &DissipationParams) -> f64 {
        let kf = path.intervals() as f64;
        let d = path.dim();
        let mut outer_total = 0.0;
        let mut inner_total = 0.0;
        for k in 0..path.intervals() {
            let (a, b) = (path.frame(k), path.frame(k + 1));
            let ea = a.edge_data().unwrap();
            let eb = b.edge_data().unwrap();
            let ma = a.midpoints();
            let mb = b.midpoints();
            for i in 0..a.num_edges() {
                let drag = |len: f64, t: &[f64]| -> DMatrix<f64> {
                    let mut m = DMatrix::identity(d, d);
                    for r in 0..d {
                        for c in 0..d {
                            m[(r, c)] += (params.outer.eps()[i] - 1.0) * t[r] * t[c];
                        }
                    }
                    m * (params.outer.weights()[i] * len)
                };
                let ba = drag(ea.lengths[i], &ea.tangents[i * d..(i + 1) * d]);
                let bb = drag(eb.lengths[i], &eb.tangents[i * d..(i + 1) * d]);
                let bbar = (ba + bb) * 0.5;
                let du: Vec<f64> = (0..d).map(|c| mb[i * d + c] - ma[i * d + c]).collect();
                let v = nalgebra::DVector::from_vec(du);
                outer_total += kf * (&bbar * &v).dot(&v);

                let r = eb.lengths[i] / ea.lengths[i];
                inner_total += kf * params.inner.sigma_strain * (1.0 - r) * (1.0 - r);
            }
            let ta = a.turning_angles().unwrap();
            let tb = b.turning_angles().unwrap();
            for j in 0..ta.len() {
                let dth = tb[j] - ta[j];
                inner_total += kf * params.inner.sigma_bend * dth * dth / ea.lengths[j];
            }
        }
        0.5 * (outer_total + inner_total)
    }

    fn random_path(seed: u64, dim: usize, n: usize, k: usize) -> MotionPath {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut frames = Vec::new();
        let mut base: Vec<f64> = Vec::new();
        for i in 0..n {
            let t = i as f64 * 0.7;
            base.push(t);
            base.push(0.3 * (t * 1.3).sin());
            if dim == 3 {
                base.push(0.2 * (t * 0.9).cos());
            }
        }
        for _ in 0..=k {
            let coords: Vec<f64> = base
                .iter()
                .map(|c| c + rng.gen_range(-0.08..0.08))
                .collect();
            frames.push(Polyline::new(dim, coords).unwrap());
        }
        MotionPath::new(frames).unwrap()
    }

    fn random_params(seed: u64, ne: usize, with_inner: bool) -> DissipationParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let eps: Vec<f64> = (0..ne).map(|_| rng.gen_range(0.2..1.0)).collect();
        let w: Vec<f64> = (0..ne).map(|_| rng.gen_range(0.5..2.0)).collect();
        DissipationParams {
            outer: OuterParams::new(eps, w).unwrap(),
            inner: if with_inner {
                InnerParams::new(rng.gen_range(0.1..1.5), rng.gen_range(0.1..1.5)).unwrap()
            } else {
                InnerParams::zero()
            },
        }
    }

    #[test]
    fn unit_edge_normal_translation() {
        let a = line(&[[0.0, 0.0], [1.0, 0.0]]);
        let b = line(&[[0.0, 0.1], [1.0, 0.1]]);
        let outer = OuterParams::uniform(1, 0.25).unwrap();
        let e = outer_pair_energy(&a, &b, &outer, 1).unwrap();
        assert_abs_diff_eq!(e, 0.01, epsilon = 1e-15);
    }

    #[test]
    fn unit_edge_tangential_translation() {
        let a = line(&[[0.0, 0.0], [1.0, 0.0]]);
        let b = line(&[[0.1, 0.0], [1.1, 0.0]]);
        let outer = OuterParams::uniform(1, 0.25).unwrap();
        let e = outer_pair_energy(&a, &b, &outer, 1).unwrap();
        assert_abs_diff_eq!(e, 0.0025, epsilon = 1e-15);
    }

    #[test]
    fn drag_tensor_frozen_values() {
        let p = Polyline::from_points_3d(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        let b = edge_drag_tensor(&p, 0, 0.5, 1.0).unwrap();
        assert_abs_diff_eq!(b[(0, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(b[(1, 1)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b[(2, 2)], 1.0, epsilon = 1e-15);
        let q = Polyline::from_points_3d(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
        let b2 = edge_drag_tensor(&q, 0, 0.5, 1.0).unwrap();
        assert_abs_diff_eq!(b2[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b2[(1, 1)], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b2[(2, 2)], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn uniform_scaling_strain() {
        let a = line(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]);
        let b = line(&[[0.0, 0.0], [1.1, 0.0], [2.2, 0.0]]);
        let inner = InnerParams::new(0.0, 1.0).unwrap();
        let e = inner_pair_energy(&a, &b, &inner, 1).unwrap();
        assert_abs_diff_eq!(e, 0.02, epsilon = 1e-14);
    }

    #[test]
    fn right_angle_bend() {
        let a = line(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]);
        let b = line(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]);
        let inner = InnerParams::new(1.0, 0.0).unwrap();
        let e = inner_pair_energy(&a, &b, &inner, 1).unwrap();
        let expect = std::f64::consts::FRAC_PI_2.powi(2);
        assert_relative_eq!(e, expect, max_relative = 1e-12);
        assert_relative_eq!(e, 2.46740110027234, max_relative = 1e-12);
    }

    #[test]
    fn total_energy_single_edge() {
        let a = line(&[[0.0, 0.0], [1.0, 0.0]]);
        let b = line(&[[0.0, 0.1], [1.0, 0.1]]);
        let path = MotionPath::new(vec![a, b]).unwrap();
        let params = DissipationParams::uniform(1, 0.25, 0.0, 0.0).unwrap();
        let e = total_energy(&path, &params).unwrap();
        assert_abs_diff_eq!(e, 0.005, epsilon = 1e-15);
    }

    #[test]
    fn matches_naive_reference() {
        for (seed, dim) in [(1u64, 2usize), (2, 2), (3, 3), (4, 3)] {
            let path = random_path(seed, dim, 6, 4);
            let params = random_params(seed, 5, true);
            let fast = total_energy(&path, &params).unwrap();
            let slow = naive_total_energy(&path, &params);
            assert_relative_eq!(fast, slow, max_relative = 1e-12);
        }
    }

    #[test]
    fn outer_pair_energy_is_swap_symmetric() {
        let path = random_path(7, 2, 5, 1);
        let outer = OuterParams::uniform(4, 0.4).unwrap();
        let ab = outer_pair_energy(path.frame(0), path.frame(1), &outer, 3).unwrap();
        let ba = outer_pair_energy(path.frame(1), path.frame(0), &outer, 3).unwrap();
        assert_relative_eq!(ab, ba, max_relative = 1e-14);
    }

    #[test]
    fn interval_scale_is_linear() {
        let path = random_path(8, 2, 5, 1);
        let outer = OuterParams::uniform(4, 0.4).unwrap();
        let e1 = outer_pair_energy(path.frame(0), path.frame(1), &outer, 1).unwrap();
        let e4 = outer_pair_energy(path.frame(0), path.frame(1), &outer, 4).unwrap();
        assert_relative_eq!(e4, 4.0 * e1, max_relative = 1e-14);
    }

    #[test]
    fn rigid_invariance_of_total_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for dim in [2usize, 3] {
            let path = random_path(dim as u64 + 10, dim, 6, 3);
            let params = random_params(11, 5, true);
            let base = total_energy(&path, &params).unwrap();
            for _ in 0..25 {
                let g = if dim == 2 {
                    crate::geometry::RigidMotion::planar(
                        rng.gen_range(-3.0..3.0),
                        [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
                    )
                } else {
                    crate::geometry::RigidMotion::spatial(
                        [
                            rng.gen_range(-2.0..2.0),
                            rng.gen_range(-2.0..2.0),
                            rng.gen_range(-2.0..2.0),
                        ],
                        [
                            rng.gen_range(-2.0..2.0),
                            rng.gen_range(-2.0..2.0),
                            rng.gen_range(-2.0..2.0),
                        ],
                    )
                };
                let moved = MotionPath::new(
                    path.frames().iter().map(|f| g.apply(f).unwrap()).collect(),
                )
                .unwrap();
                let e = total_energy(&moved, &params).unwrap();
                assert_relative_eq!(e, base, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn timeseries_sums_match_totals() {
        let path = random_path(21, 2, 6, 5);
        let params = random_params(22, 5, true);
        let series = dissipation_timeseries(&path, &params).unwrap();
        assert_eq!(series.len(), 5);
        let total: f64 = series.iter().map(|r| r.total).sum();
        let e = total_energy(&path, &params).unwrap();
        assert_relative_eq!(total, 2.0 * e, max_relative = 1e-13);
        for r in &series {
            assert_abs_diff_eq!(r.total, r.outer + r.inner, epsilon = 1e-15);
        }
    }

    fn fd_gradient(path: &MotionPath, params: &DissipationParams) -> DVector<f64> {
        let mut flat = path.to_flat();
        let diam = path
            .frames()
            .iter()
            .map(|f| f.bbox_diameter())
            .fold(0.0_f64, f64::max);
        let h = 1e-6 * diam.max(1.0);
        let dim = path.dim();
        let n = path.num_vertices();
        let mut g = DVector::zeros(flat.len());
        for i in 0..flat.len() {
            let x0 = flat[i];
            flat[i] = x0 + h;
            let fp = eval_path(dim, n, flat.as_slice(), path.intervals(), params, EvalRequest::value_only()).unwrap();
            flat[i] = x0 - h;
            let fm = eval_path(dim, n, flat.as_slice(), path.intervals(), params, EvalRequest::value_only()).unwrap();
            flat[i] = x0;
            g[i] = (fp - fm) / (2.0 * h);
        }
        g
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (seed, dim, with_inner) in [(31u64, 2usize, true), (32, 3, true), (33, 2, false)] {
            let path = random_path(seed, dim, 5, 3);
            let params = random_params(seed, 4, with_inner);
            let g = energy_gradient(&path, &params).unwrap();
            let fd = fd_gradient(&path, &params);
            let scale = g.amax().max(1e-12);
            let err = (&g - &fd).amax() / scale;
            assert!(err < 1e-5, "gradient FD mismatch: rel err {err:.3e}");
        }
    }

    #[test]
    fn hessian_matches_finite_differences() {
        for (seed, dim) in [(41u64, 2usize), (42, 3)] {
            let path = random_path(seed, dim, 5, 3);
            let params = random_params(seed, 4, true);
            let hess = energy_hessian(&path, &params).unwrap();
            assert!(hess.max_diag_asymmetry() < 1e-12);

            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let flat = path.to_flat();
            let h = 1e-6;
            for _ in 0..4 {
                let dir = DVector::from_fn(flat.len(), |_, _| rng.gen_range(-1.0..1.0_f64));
                let dir = &dir / dir.norm();
                let eval_g = |x: &DVector<f64>| {
                    let mut g = DVector::zeros(x.len());
                    eval_path(
                        path.dim(),
                        path.num_vertices(),
                        x.as_slice(),
                        path.intervals(),
                        &params,
                        EvalRequest {
                            grad: Some(&mut g),
                            hess: None,
                            per_interval: None,
                        },
                    )
                    .unwrap();
                    g
                };
                let gp = eval_g(&(&flat + h * &dir));
                let gm = eval_g(&(&flat - h * &dir));
                let fd = (gp - gm) / (2.0 * h);
                let hv = hess.mul_vec(&dir);
                let scale = hv.amax().max(1.0);
                let err = (&hv - &fd).amax() / scale;
                assert!(err < 1e-4, "hessian FD mismatch: rel err {err:.3e}");
            }
        }
    }

    #[test]
    fn hessian_couples_only_adjacent_frames() {
        // Implied by the storage type; spot-check the dense form on a tiny path.
        let path = random_path(55, 2, 3, 3);
        let params = random_params(55, 2, true);
        let hess = energy_hessian(&path, &params).unwrap();
        let dense = hess.to_dense();
        let nd = 6;
        for kb in 0..4usize {
            for lb in 0..4usize {
                if kb.abs_diff(lb) > 1 {
                    let block = dense.view((kb * nd, lb * nd), (nd, nd));
                    assert_abs_diff_eq!(block.amax(), 0.0);
                }
            }
        }
    }

    #[test]
    fn anisotropy_ratio_between_normal_and_tangential() {
        let a = line(&[[0.0, 0.0], [1.0, 0.0]]);
        let bn = line(&[[0.0, 0.1], [1.0, 0.1]]);
        let bt = line(&[[0.1, 0.0], [1.1, 0.0]]);
        for eps in [0.1, 0.3, 1.0] {
            let outer = OuterParams::uniform(1, eps).unwrap();
            let en = outer_pair_energy(&a, &bn, &outer, 1).unwrap();
            let et = outer_pair_energy(&a, &bt, &outer, 1).unwrap();
            assert_relative_eq!(en / et, 1.0 / eps, max_relative = 1e-12);
        }
    }

    #[test]
    fn params_are_validated() {
        assert!(OuterParams::uniform(3, 0.0).is_err());
        assert!(OuterParams::uniform(3, 1.2).is_err());
        assert!(OuterParams::uniform(0, 0.5).is_err());
        assert!(OuterParams::new(vec![0.5], vec![-1.0]).is_err());
        assert!(OuterParams::new(vec![0.5, 0.5], vec![1.0]).is_err());
        assert!(InnerParams::new(-0.1, 0.0).is_err());
        assert!(InnerParams::new(0.0, f64::NAN).is_err());
        let path = random_path(60, 2, 5, 2);
        let params = random_params(60, 3, true); // wrong edge count
        assert!(matches!(
            total_energy(&path, &params),
            Err(DissipationError::EdgeCountMismatch { .. })
        ));
    }

    #[test]
    fn degenerate_frame_is_reported() {
        let a = line(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]);
        let params = DissipationParams::uniform(2, 0.5, 0.0, 0.0).unwrap();
        let mut flat: Vec<f64> = Vec::new();
        flat.extend_from_slice(a.coords());
        flat.extend_from_slice(a.coords());
        // Collapse an edge in the second frame.
        flat[6 + 2] = 0.0;
        flat[6 + 3] = 0.0;
        let err = eval_path(2, 3, &flat, 1, &params, EvalRequest::value_only()).unwrap_err();
        match err {
            DissipationError::FrameGeometry { frame, .. } => assert_eq!(frame, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
