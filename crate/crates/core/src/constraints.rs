//! Momentum, boundary, anchoring, and length constraints on motion paths.
//!
//! A self-propelled body cannot exert net force or torque on the surrounding
//! medium, so every time interval of an admissible motion satisfies one
//! linear-momentum row per coordinate axis and one angular-momentum row per
//! rotation plane. These rows are exactly the directional derivatives of the
//! interval drag energy along rigid generator fields applied to the later
//! frame, scaled by `-1/2`; `noether_identity_matches_energy_gradient` in the
//! test block pins that relationship.
//!
//! The remaining constraints are frame-local: stationarity of a prescribed
//! rigid displacement against the final frame (used when the end shape is
//! free), a centroid anchor fixing the translational gauge, and edge-length
//! rows serving both as rigidity equalities and collapse guards.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dissipation::kernels::{
    drag_apply_de, drag_d2ee_contract, drag_dednu_contract, drag_matrix, length_grad, length_hess,
    pad, M3, V3,
};
use crate::dissipation::OuterParams;
use crate::geometry::{GeometryError, MotionPath, Polyline, RigidMotion};
use crate::vecmath::{cross_padded, rigid_dim, rot_dim};

#[derive(Debug, Clone, Error)]
pub enum ConstraintError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("mismatch: {0}")]
    Mismatch(String),
}

/// Number of momentum rows per time interval: one per rotation plane plus
/// one per translation axis (3 in the plane, 6 in space).
pub fn momentum_rows(dim: usize) -> usize {
    rigid_dim(dim)
}

// Small fixed-size matrix helpers; all blocks are at most 3 x 3 or, for
// stacked constraint rows, 6 x 3.
fn mul3(d: usize, a: &M3, b: &M3) -> M3 {
    let mut out = [[0.0; 3]; 3];
    for r in 0..d {
        for c in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += a[r][k] * b[k][c];
            }
            out[r][c] = acc;
        }
    }
    out
}

/// `a^T b` for blocks stored as plain `[row][col]` arrays.
fn tmul3(d: usize, a: &M3, b: &M3) -> M3 {
    let mut out = [[0.0; 3]; 3];
    for r in 0..d {
        for c in 0..d {
            let mut acc = 0.0;
            for i in 0..d {
                acc += a[i][r] * b[i][c];
            }
            out[r][c] = acc;
        }
    }
    out
}

fn transpose3(d: usize, a: &M3) -> M3 {
    let mut out = [[0.0; 3]; 3];
    for r in 0..d {
        for c in 0..d {
            out[r][c] = a[c][r];
        }
    }
    out
}

fn mat_vec3(d: usize, a: &M3, v: &V3) -> V3 {
    let mut out = [0.0; 3];
    for r in 0..d {
        let mut acc = 0.0;
        for c in 0..d {
            acc += a[r][c] * v[c];
        }
        out[r] = acc;
    }
    out
}

fn combo3(d: usize, a: &M3, sa: f64, b: &M3, sb: f64) -> M3 {
    let mut out = [[0.0; 3]; 3];
    for r in 0..d {
        for c in 0..d {
            out[r][c] = sa * a[r][c] + sb * b[r][c];
        }
    }
    out
}

/// Jacobian of `x -> (lam x x)` where `lam` holds rotation multipliers: the
/// planar quarter-turn scaled by the single multiplier, or the 3D skew map.
fn rot_multiplier_map(d: usize, lam_rot: &[f64]) -> M3 {
    let mut out = [[0.0; 3]; 3];
    if d == 2 {
        out[0][1] = -lam_rot[0];
        out[1][0] = lam_rot[0];
    } else {
        out[0][1] = -lam_rot[2];
        out[0][2] = lam_rot[1];
        out[1][0] = lam_rot[2];
        out[1][2] = -lam_rot[0];
        out[2][0] = -lam_rot[1];
        out[2][1] = lam_rot[0];
    }
    out
}

/// `lam x x` with `lam` the rotation multipliers (padded output).
fn rot_multiplier_apply(d: usize, lam_rot: &[f64], x: &V3) -> V3 {
    if d == 2 {
        [-lam_rot[0] * x[1], lam_rot[0] * x[0], 0.0]
    } else {
        [
            lam_rot[1] * x[2] - lam_rot[2] * x[1],
            lam_rot[2] * x[0] - lam_rot[0] * x[2],
            lam_rot[0] * x[1] - lam_rot[1] * x[0],
        ]
    }
}

/// Rows `t` of the derivative of `cross(x, w)` with respect to `x`.
fn dcross_dx(d: usize, w: &V3) -> M3 {
    let mut out = [[0.0; 3]; 3];
    if d == 2 {
        out[0][0] = w[1];
        out[0][1] = -w[0];
    } else {
        out[0][1] = w[2];
        out[0][2] = -w[1];
        out[1][0] = -w[2];
        out[1][2] = w[0];
        out[2][0] = w[1];
        out[2][1] = -w[0];
    }
    out
}

/// Rows `t` of the derivative of `cross(x, w)` with respect to `w`.
fn dcross_dw(d: usize, x: &V3) -> M3 {
    let mut out = [[0.0; 3]; 3];
    if d == 2 {
        out[0][0] = -x[1];
        out[0][1] = x[0];
    } else {
        out[0][1] = -x[2];
        out[0][2] = x[1];
        out[1][0] = x[2];
        out[1][2] = -x[0];
        out[2][0] = -x[1];
        out[2][1] = x[0];
    }
    out
}

/// Momentum balance of one interval on the two-frame window `win` (frames
/// `k` and `k+1` stacked, `2 n d` coordinates).
///
/// Row layout: `rot_dim` torque rows first, then `d` force rows. `kf` is the
/// interval count of the underlying time grid (velocities scale with it).
/// Optionally fills the dense Jacobian (rows x `2 n d`) and accumulates the
/// multiplier-weighted second derivative into a `2 n d` square window.
pub(crate) fn momentum_window(
    dim: usize,
    n: usize,
    win: &[f64],
    kf: f64,
    outer: &OuterParams,
    res: &mut [f64],
    mut jac: Option<&mut DMatrix<f64>>,
    mut hess: Option<(&[f64], &mut DMatrix<f64>)>,
) {
    let rt = rot_dim(dim);
    let m = rt + dim;
    let nd = n * dim;
    debug_assert_eq!(win.len(), 2 * nd);
    debug_assert_eq!(res.len(), m);
    res.fill(0.0);
    if let Some(j) = jac.as_deref_mut() {
        debug_assert_eq!((j.nrows(), j.ncols()), (m, 2 * nd));
        j.fill(0.0);
    }
    if let Some((lam, h)) = hess.as_mut() {
        debug_assert_eq!(lam.len(), m);
        debug_assert_eq!((h.nrows(), h.ncols()), (2 * nd, 2 * nd));
        h.fill(0.0);
    }

    for i in 0..n - 1 {
        let a0 = pad(dim, &win[i * dim..(i + 1) * dim]);
        let a1 = pad(dim, &win[(i + 1) * dim..(i + 2) * dim]);
        let b0 = pad(dim, &win[(n + i) * dim..(n + i + 1) * dim]);
        let b1 = pad(dim, &win[(n + i + 1) * dim..(n + i + 2) * dim]);
        let mut ea = [0.0; 3];
        let mut eb = [0.0; 3];
        let mut eta_a = [0.0; 3];
        let mut eta_b = [0.0; 3];
        let mut nu = [0.0; 3];
        for c in 0..dim {
            ea[c] = a1[c] - a0[c];
            eb[c] = b1[c] - b0[c];
            eta_a[c] = 0.5 * (a0[c] + a1[c]);
            eta_b[c] = 0.5 * (b0[c] + b1[c]);
            nu[c] = kf * (eta_b[c] - eta_a[c]);
        }
        let par = outer.edge(i);
        let ba = drag_matrix(dim, &ea, par);
        let bb = drag_matrix(dim, &eb, par);
        let wa = mat_vec3(dim, &ba, &nu);
        let wb = mat_vec3(dim, &bb, &nu);

        for c in 0..dim {
            res[rt + c] -= 0.5 * (wa[c] + wb[c]);
        }
        let cr_b = cross_padded(dim, &eta_b[..dim], &wa[..dim]);
        let cr_a = cross_padded(dim, &eta_a[..dim], &wb[..dim]);
        for t in 0..rt {
            res[t] -= 0.5 * (cr_b[t] + cr_a[t]);
        }

        let need_jac = jac.is_some();
        let need_hess = hess.is_some();
        if !(need_jac || need_hess) {
            continue;
        }

        let ja = drag_apply_de(dim, &ea, &nu, par);
        let jb = drag_apply_de(dim, &eb, &nu, par);

        if let Some(j) = jac.as_deref_mut() {
            let bbar = combo3(dim, &ba, 0.5, &bb, 0.5);
            let dcw_b = dcross_dw(dim, &eta_b);
            let dcw_a = dcross_dw(dim, &eta_a);
            let dcx_wa = dcross_dx(dim, &wa);
            let dcx_wb = dcross_dx(dim, &wb);
            // P = dcw(eta_b) B_a + dcw(eta_a) B_b couples torque to velocity.
            let p = combo3(
                dim,
                &mul3(dim, &dcw_b, &ba),
                1.0,
                &mul3(dim, &dcw_a, &bb),
                1.0,
            );
            // Partial blocks by window quantity: tangents of both frames and
            // midpoints of both frames, rows = constraint rows.
            let mut d_ea = [[0.0; 3]; 6];
            let mut d_eb = [[0.0; 3]; 6];
            let mut d_ha = [[0.0; 3]; 6];
            let mut d_hb = [[0.0; 3]; 6];
            for r in 0..dim {
                for c in 0..dim {
                    d_ea[rt + c][r] = -0.5 * ja[c][r];
                    d_eb[rt + c][r] = -0.5 * jb[c][r];
                    d_ha[rt + c][r] = kf * bbar[c][r];
                    d_hb[rt + c][r] = -kf * bbar[c][r];
                }
                for t in 0..rt {
                    let mut sa = 0.0;
                    let mut sb = 0.0;
                    for c in 0..dim {
                        sa += dcw_b[t][c] * ja[c][r];
                        sb += dcw_a[t][c] * jb[c][r];
                    }
                    d_ea[t][r] = -0.5 * sa;
                    d_eb[t][r] = -0.5 * sb;
                    d_ha[t][r] = -0.5 * (dcx_wb[t][r] - kf * p[t][r]);
                    d_hb[t][r] = -0.5 * (dcx_wa[t][r] + kf * p[t][r]);
                }
            }
            let bases = [i * dim, (i + 1) * dim, (n + i) * dim, (n + i + 1) * dim];
            for row in 0..m {
                for r in 0..dim {
                    j[(row, bases[0] + r)] += -d_ea[row][r] + 0.5 * d_ha[row][r];
                    j[(row, bases[1] + r)] += d_ea[row][r] + 0.5 * d_ha[row][r];
                    j[(row, bases[2] + r)] += -d_eb[row][r] + 0.5 * d_hb[row][r];
                    j[(row, bases[3] + r)] += d_eb[row][r] + 0.5 * d_hb[row][r];
                }
            }
        }

        if let Some((lam, h)) = hess.as_mut() {
            let lam_rot = &lam[..rt];
            let lam_f = &lam[rt..rt + dim];
            let mut mu_a = rot_multiplier_apply(dim, lam_rot, &eta_a);
            let mut mu_b = rot_multiplier_apply(dim, lam_rot, &eta_b);
            for c in 0..dim {
                mu_a[c] += lam_f[c];
                mu_b[c] += lam_f[c];
            }
            let cap = rot_multiplier_map(dim, lam_rot);

            let aee = drag_d2ee_contract(dim, &ea, &nu, &mu_b, par);
            let bee = drag_d2ee_contract(dim, &eb, &nu, &mu_a, par);
            let m1 = drag_dednu_contract(dim, &ea, &mu_b, par);
            let m2 = drag_dednu_contract(dim, &eb, &mu_a, par);
            let ja_tl = tmul3(dim, &ja, &cap);
            let jb_tl = tmul3(dim, &jb, &cap);
            let ba_l = mul3(dim, &ba, &cap);
            let bb_l = mul3(dim, &bb, &cap);

            let c1 = combo3(dim, &m1, -0.5 * kf, &ja_tl, -0.5);
            let c2 = combo3(dim, &m2, 0.5 * kf, &jb_tl, -0.5);
            let c3 = combo3(dim, &ba_l, 0.5 * kf, &transpose3(dim, &bb_l), -0.5 * kf);
            let haa = combo3(dim, &bb_l, 0.5 * kf, &transpose3(dim, &bb_l), 0.5 * kf);
            let hbb = combo3(dim, &ba_l, -0.5 * kf, &transpose3(dim, &ba_l), -0.5 * kf);

            let bases = [i * dim, (i + 1) * dim, (n + i) * dim, (n + i + 1) * dim];
            let ce_a: [(usize, f64); 2] = [(0, -1.0), (1, 1.0)];
            let ch_a: [(usize, f64); 2] = [(0, 0.5), (1, 0.5)];
            let ce_b: [(usize, f64); 2] = [(2, -1.0), (3, 1.0)];
            let ch_b: [(usize, f64); 2] = [(2, 0.5), (3, 0.5)];
            let mut place = |rows: &[(usize, f64)], cols: &[(usize, f64)], mat: &M3, s: f64| {
                for &(pa, sa) in rows {
                    for &(pb, sb) in cols {
                        let f = s * sa * sb;
                        for r in 0..dim {
                            for c in 0..dim {
                                h[(bases[pa] + r, bases[pb] + c)] += f * mat[r][c];
                            }
                        }
                    }
                }
            };
            place(&ce_a, &ce_a, &aee, -0.5);
            place(&ce_b, &ce_b, &bee, -0.5);
            place(&ce_a, &ch_a, &m1, 0.5 * kf);
            place(&ch_a, &ce_a, &transpose3(dim, &m1), 0.5 * kf);
            place(&ce_a, &ch_b, &c1, 1.0);
            place(&ch_b, &ce_a, &transpose3(dim, &c1), 1.0);
            place(&ce_b, &ch_b, &m2, -0.5 * kf);
            place(&ch_b, &ce_b, &transpose3(dim, &m2), -0.5 * kf);
            place(&ce_b, &ch_a, &c2, 1.0);
            place(&ch_a, &ce_b, &transpose3(dim, &c2), 1.0);
            place(&ch_a, &ch_b, &c3, 1.0);
            place(&ch_b, &ch_a, &transpose3(dim, &c3), 1.0);
            place(&ch_a, &ch_a, &haa, 1.0);
            place(&ch_b, &ch_b, &hbb, 1.0);
        }
    }
}

/// Momentum residuals of every interval of the path, stacked, with the row
/// layout of [`momentum_window`].
pub fn horizontality_residual(
    path: &MotionPath,
    outer: &OuterParams,
) -> Result<DVector<f64>, ConstraintError> {
    if outer.num_edges() != path.num_vertices() - 1 {
        return Err(ConstraintError::Mismatch(format!(
            "drag parameters sized for {} edges, path has {}",
            outer.num_edges(),
            path.num_vertices() - 1
        )));
    }
    let dim = path.dim();
    let n = path.num_vertices();
    let m = momentum_rows(dim);
    let kf = path.intervals() as f64;
    let flat = path.to_flat();
    let nd = n * dim;
    let mut out = DVector::zeros(path.intervals() * m);
    for k in 0..path.intervals() {
        momentum_window(
            dim,
            n,
            &flat.as_slice()[k * nd..(k + 2) * nd],
            kf,
            outer,
            &mut out.as_mut_slice()[k * m..(k + 1) * m],
            None,
            None,
        );
    }
    Ok(out)
}

/// Largest absolute momentum row over all intervals.
pub fn max_horizontality_violation(
    path: &MotionPath,
    outer: &OuterParams,
) -> Result<f64, ConstraintError> {
    Ok(horizontality_residual(path, outer)?.amax())
}

/// Dense Jacobian of [`horizontality_residual`] with respect to every
/// vertex coordinate, frame-major; mainly a diagnostic for derivative
/// checking.
pub fn horizontality_jacobian(
    path: &MotionPath,
    outer: &OuterParams,
) -> Result<DMatrix<f64>, ConstraintError> {
    if outer.num_edges() != path.num_vertices() - 1 {
        return Err(ConstraintError::Mismatch(format!(
            "drag parameters sized for {} edges, path has {}",
            outer.num_edges(),
            path.num_vertices() - 1
        )));
    }
    let dim = path.dim();
    let n = path.num_vertices();
    let m = momentum_rows(dim);
    let kf = path.intervals() as f64;
    let flat = path.to_flat();
    let nd = n * dim;
    let mut out = DMatrix::zeros(path.intervals() * m, (path.intervals() + 1) * nd);
    let mut res = vec![0.0; m];
    let mut jac = DMatrix::zeros(m, 2 * nd);
    for k in 0..path.intervals() {
        momentum_window(
            dim,
            n,
            &flat.as_slice()[k * nd..(k + 2) * nd],
            kf,
            outer,
            &mut res,
            Some(&mut jac),
            None,
        );
        out.view_mut((k * m, k * nd), (m, 2 * nd)).copy_from(&jac);
    }
    Ok(out)
}

/// Midpoints of the initial shape pushed through the prescribed displacement;
/// the constants entering the final-frame stationarity rows.
pub fn displaced_midpoints(
    initial: &Polyline,
    g: &RigidMotion,
) -> Result<Vec<f64>, ConstraintError> {
    if g.dim() != initial.dim() {
        return Err(ConstraintError::Mismatch(
            "displacement dimension differs from curve dimension".into(),
        ));
    }
    let d = initial.dim();
    let mids = initial.midpoints();
    let mut out = vec![0.0; mids.len()];
    for i in 0..initial.num_edges() {
        g.apply_point(&mids[i * d..(i + 1) * d], &mut out[i * d..(i + 1) * d]);
    }
    Ok(out)
}

/// Stationarity of the weighted registration objective at the prescribed
/// displacement, evaluated on a single frame `x` (flat coordinates).
///
/// With `c_i` the displaced initial midpoints, `m_i` and `w_i` the midpoints
/// and edge lengths of `x`, the rows are `sum_i w_i (c_i - m_i)` (one per
/// axis, first) followed by `-sum_i w_i cross(c_i, m_i)` (one per rotation
/// plane). They vanish exactly when the prescribed displacement is the best
/// rigid registration of the initial shape onto `x`.
pub(crate) fn registration_window(
    dim: usize,
    n: usize,
    x: &[f64],
    targets: &[f64],
    res: &mut [f64],
    mut jac: Option<&mut DMatrix<f64>>,
    mut hess: Option<(&[f64], &mut DMatrix<f64>)>,
) {
    let rt = rot_dim(dim);
    let m = dim + rt;
    let nd = n * dim;
    debug_assert_eq!(x.len(), nd);
    debug_assert_eq!(targets.len(), (n - 1) * dim);
    debug_assert_eq!(res.len(), m);
    res.fill(0.0);
    if let Some(j) = jac.as_deref_mut() {
        debug_assert_eq!((j.nrows(), j.ncols()), (m, nd));
        j.fill(0.0);
    }
    if let Some((lam, h)) = hess.as_mut() {
        debug_assert_eq!(lam.len(), m);
        debug_assert_eq!((h.nrows(), h.ncols()), (nd, nd));
        h.fill(0.0);
    }

    for i in 0..n - 1 {
        let x0 = pad(dim, &x[i * dim..(i + 1) * dim]);
        let x1 = pad(dim, &x[(i + 1) * dim..(i + 2) * dim]);
        let mut e = [0.0; 3];
        let mut mid = [0.0; 3];
        for c in 0..dim {
            e[c] = x1[c] - x0[c];
            mid[c] = 0.5 * (x0[c] + x1[c]);
        }
        let (l, t) = length_grad(dim, &e);
        let cpt = pad(dim, &targets[i * dim..(i + 1) * dim]);
        let mut cm = [0.0; 3];
        for c in 0..dim {
            cm[c] = cpt[c] - mid[c];
        }
        for c in 0..dim {
            res[c] += l * cm[c];
        }
        let cr = cross_padded(dim, &cpt[..dim], &mid[..dim]);
        for tt in 0..rt {
            res[dim + tt] -= l * cr[tt];
        }

        if let Some(j) = jac.as_deref_mut() {
            let dcw = dcross_dw(dim, &cpt);
            for (v, s) in [(0usize, -1.0), (1usize, 1.0)] {
                let base = (i + v) * dim;
                for r in 0..dim {
                    for c in 0..dim {
                        let id = if r == c { 1.0 } else { 0.0 };
                        j[(r, base + c)] += s * cm[r] * t[c] - 0.5 * l * id;
                    }
                }
                for tt in 0..rt {
                    for c in 0..dim {
                        j[(dim + tt, base + c)] -= s * cr[tt] * t[c] + 0.5 * l * dcw[tt][c];
                    }
                }
            }
        }

        if let Some((lam, h)) = hess.as_mut() {
            // lam^T res = sum_i l_i (k_i - <q_i, m_i>) with constant q_i.
            let lam_t = &lam[..dim];
            let lam_r = &lam[dim..dim + rt];
            let mut q = rot_multiplier_apply(dim, lam_r, &cpt);
            let mut kconst = 0.0;
            for c in 0..dim {
                q[c] += lam_t[c];
                kconst += lam_t[c] * cpt[c];
            }
            let mut qm = 0.0;
            for c in 0..dim {
                qm += q[c] * mid[c];
            }
            let phi = kconst - qm;
            let lh = length_hess(dim, &e);
            for (va, sa) in [(0usize, -1.0), (1usize, 1.0)] {
                for (vb, sb) in [(0usize, -1.0), (1usize, 1.0)] {
                    let (ra, rb) = ((i + va) * dim, (i + vb) * dim);
                    for r in 0..dim {
                        for c in 0..dim {
                            h[(ra + r, rb + c)] += sa * sb * phi * lh[r][c];
                        }
                    }
                }
                // Mixed length-gradient and midpoint terms, both orders.
                for (vb, _) in [(0usize, 0.5), (1usize, 0.5)] {
                    let (ra, rb) = ((i + va) * dim, (i + vb) * dim);
                    for r in 0..dim {
                        for c in 0..dim {
                            let val = sa * t[r] * 0.5 * (-q[c]);
                            h[(ra + r, rb + c)] += val;
                            h[(rb + c, ra + r)] += val;
                        }
                    }
                }
            }
        }
    }
}

/// Final-frame stationarity residual of a prescribed displacement; see
/// [`registration_window`] for the row layout.
pub fn registration_stationarity_residual(
    initial: &Polyline,
    final_frame: &Polyline,
    g: &RigidMotion,
) -> Result<Vec<f64>, ConstraintError> {
    if initial.dim() != final_frame.dim() || initial.num_vertices() != final_frame.num_vertices()
    {
        return Err(ConstraintError::Mismatch(
            "initial and final frames must share dimension and vertex count".into(),
        ));
    }
    let targets = displaced_midpoints(initial, g)?;
    let mut res = vec![0.0; momentum_rows(initial.dim())];
    registration_window(
        initial.dim(),
        initial.num_vertices(),
        final_frame.coords(),
        &targets,
        &mut res,
        None,
        None,
    );
    Ok(res)
}

/// Length-weighted centroid residual of a single frame against a target
/// point, with optional Jacobian and multiplier-weighted second derivative.
pub(crate) fn anchor_window(
    dim: usize,
    n: usize,
    x: &[f64],
    target: &[f64],
    res: &mut [f64],
    mut jac: Option<&mut DMatrix<f64>>,
    hess: Option<(&[f64], &mut DMatrix<f64>)>,
) {
    let nd = n * dim;
    debug_assert_eq!(x.len(), nd);
    debug_assert_eq!(res.len(), dim);
    debug_assert_eq!(target.len(), dim);

    // First pass: total length, weighted midpoint sum, and full-frame
    // gradients of both.
    let mut w_total = 0.0;
    let mut swm = [0.0; 3];
    let mut lens = vec![0.0; n - 1];
    let mut tans = vec![[0.0; 3]; n - 1];
    let mut mids = vec![[0.0; 3]; n - 1];
    for i in 0..n - 1 {
        let x0 = pad(dim, &x[i * dim..(i + 1) * dim]);
        let x1 = pad(dim, &x[(i + 1) * dim..(i + 2) * dim]);
        let mut e = [0.0; 3];
        for c in 0..dim {
            e[c] = x1[c] - x0[c];
            mids[i][c] = 0.5 * (x0[c] + x1[c]);
        }
        let (l, t) = length_grad(dim, &e);
        lens[i] = l;
        tans[i] = t;
        w_total += l;
        for c in 0..dim {
            swm[c] += l * mids[i][c];
        }
    }
    for c in 0..dim {
        res[c] = swm[c] / w_total - target[c];
    }

    if let Some(j) = jac.as_deref_mut() {
        debug_assert_eq!((j.nrows(), j.ncols()), (dim, nd));
        j.fill(0.0);
        for i in 0..n - 1 {
            for (v, s) in [(0usize, -1.0), (1usize, 1.0)] {
                let base = (i + v) * dim;
                for r in 0..dim {
                    for c in 0..dim {
                        let id = if r == c { 1.0 } else { 0.0 };
                        let d_swm = mids[i][r] * s * tans[i][c] + 0.5 * lens[i] * id;
                        let d_w = s * tans[i][c];
                        j[(r, base + c)] += d_swm / w_total - swm[r] * d_w / (w_total * w_total);
                    }
                }
            }
        }
    }

    if let Some((lam, h)) = hess {
        debug_assert_eq!(lam.len(), dim);
        debug_assert_eq!((h.nrows(), h.ncols()), (nd, nd));
        h.fill(0.0);
        // S = A / W with A = sum_i l_i <lam, m_i> and W = sum_i l_i.
        let mut a_val = 0.0;
        let mut ga: DVector<f64> = DVector::zeros(nd);
        let mut gw: DVector<f64> = DVector::zeros(nd);
        for i in 0..n - 1 {
            let mut lm = 0.0;
            for c in 0..dim {
                lm += lam[c] * mids[i][c];
            }
            a_val += lens[i] * lm;
            for (v, s) in [(0usize, -1.0), (1usize, 1.0)] {
                let base = (i + v) * dim;
                for c in 0..dim {
                    ga[base + c] += lm * s * tans[i][c] + 0.5 * lens[i] * lam[c];
                    gw[base + c] += s * tans[i][c];
                }
            }
        }
        // Windowed curvature of A and W.
        for i in 0..n - 1 {
            let x0 = pad(dim, &x[i * dim..(i + 1) * dim]);
            let x1 = pad(dim, &x[(i + 1) * dim..(i + 2) * dim]);
            let mut e = [0.0; 3];
            for c in 0..dim {
                e[c] = x1[c] - x0[c];
            }
            let lh = length_hess(dim, &e);
            let mut lm = 0.0;
            for c in 0..dim {
                lm += lam[c] * mids[i][c];
            }
            // d2A = lm * d2l + sym(dl (x) lam/2); d2W = d2l.
            let head = lm / w_total - a_val / (w_total * w_total);
            for (va, sa) in [(0usize, -1.0), (1usize, 1.0)] {
                for (vb, sb) in [(0usize, -1.0), (1usize, 1.0)] {
                    let (ra, rb) = ((i + va) * dim, (i + vb) * dim);
                    for r in 0..dim {
                        for c in 0..dim {
                            h[(ra + r, rb + c)] += sa * sb * head * lh[r][c];
                        }
                    }
                }
                for (vb, _) in [(0usize, 0.5), (1usize, 0.5)] {
                    let (ra, rb) = ((i + va) * dim, (i + vb) * dim);
                    for r in 0..dim {
                        for c in 0..dim {
                            let val = sa * tans[i][r] * 0.5 * lam[c] / w_total;
                            h[(ra + r, rb + c)] += val;
                            h[(rb + c, ra + r)] += val;
                        }
                    }
                }
            }
        }
        // Rank-one tails of the quotient rule.
        let w2 = w_total * w_total;
        let w3 = w2 * w_total;
        for r in 0..nd {
            for c in 0..nd {
                h[(r, c)] += -(ga[r] * gw[c] + gw[r] * ga[c]) / w2
                    + 2.0 * a_val * gw[r] * gw[c] / w3;
            }
        }
    }
}

/// Edge-length rows `l_i(x) - target_j` on a single frame for the selected
/// edges, with optional Jacobian and multiplier-weighted second derivative.
pub(crate) fn edge_length_window(
    dim: usize,
    n: usize,
    x: &[f64],
    edges: &[usize],
    targets: &[f64],
    res: &mut [f64],
    mut jac: Option<&mut DMatrix<f64>>,
    hess: Option<(&[f64], &mut DMatrix<f64>)>,
) {
    let nd = n * dim;
    debug_assert_eq!(x.len(), nd);
    debug_assert_eq!(edges.len(), targets.len());
    debug_assert_eq!(res.len(), edges.len());
    if let Some(j) = jac.as_deref_mut() {
        debug_assert_eq!((j.nrows(), j.ncols()), (edges.len(), nd));
        j.fill(0.0);
    }
    let mut hslot = hess;
    if let Some((lam, h)) = hslot.as_mut() {
        debug_assert_eq!(lam.len(), edges.len());
        debug_assert_eq!((h.nrows(), h.ncols()), (nd, nd));
        h.fill(0.0);
    }
    for (row, (&ei, &target)) in edges.iter().zip(targets).enumerate() {
        debug_assert!(ei + 1 < n);
        let x0 = pad(dim, &x[ei * dim..(ei + 1) * dim]);
        let x1 = pad(dim, &x[(ei + 1) * dim..(ei + 2) * dim]);
        let mut e = [0.0; 3];
        for c in 0..dim {
            e[c] = x1[c] - x0[c];
        }
        let (l, t) = length_grad(dim, &e);
        res[row] = l - target;
        if let Some(j) = jac.as_deref_mut() {
            for (v, s) in [(0usize, -1.0), (1usize, 1.0)] {
                for c in 0..dim {
                    j[(row, (ei + v) * dim + c)] += s * t[c];
                }
            }
        }
        if let Some((lam, h)) = hslot.as_mut() {
            let lh = length_hess(dim, &e);
            for (va, sa) in [(0usize, -1.0), (1usize, 1.0)] {
                for (vb, sb) in [(0usize, -1.0), (1usize, 1.0)] {
                    let (ra, rb) = ((ei + va) * dim, (ei + vb) * dim);
                    for r in 0..dim {
                        for c in 0..dim {
                            h[(ra + r, rb + c)] += sa * sb * lam[row] * lh[r][c];
                        }
                    }
                }
            }
        }
    }
}

/// Coordinate gap `g(frame 0) - frame K`, zero exactly on periodic paths.
pub fn periodic_gap(path: &MotionPath, g: &RigidMotion) -> Result<DVector<f64>, ConstraintError> {
    if g.dim() != path.dim() {
        return Err(ConstraintError::Mismatch(
            "displacement dimension differs from path dimension".into(),
        ));
    }
    let moved = g.apply(path.frame(0))?;
    let last = path.frame(path.intervals());
    let mut out = DVector::zeros(moved.coords().len());
    for (i, o) in out.iter_mut().enumerate() {
        *o = moved.coords()[i] - last.coords()[i];
    }
    Ok(out)
}
