//! Low-level derivative kernels for the drag and shape-change energies.
//!
//! All kernels work on vectors padded to three slots so the plane and space
//! cases share code; loops run over the runtime dimension `d`. Conventions:
//! an edge vector `e` has length `l` and unit tangent `T = e / l`; the drag
//! tensor of an edge is
//!
//! `B(e) = weight * l * (I + (eps - 1) T T^T)`
//!
//! with tangential eigenvalue `weight * l * eps` and normal eigenvalue
//! `weight * l`. Slide-along-the-body is cheap for `eps < 1`.

pub type V3 = [f64; 3];
pub type M3 = [[f64; 3]; 3];

/// Per-edge drag coefficients: anisotropy ratio and positive weight.
#[derive(Debug, Clone, Copy)]
pub struct DragParams {
    pub eps: f64,
    pub weight: f64,
}

#[inline]
pub fn pad(d: usize, s: &[f64]) -> V3 {
    let mut out = [0.0; 3];
    out[..d].copy_from_slice(&s[..d]);
    out
}

#[inline]
fn dot(d: usize, a: &V3, b: &V3) -> f64 {
    let mut acc = 0.0;
    for c in 0..d {
        acc += a[c] * b[c];
    }
    acc
}

#[inline]
fn norm(d: usize, a: &V3) -> f64 {
    dot(d, a, a).sqrt()
}

/// `B(e) p`.
pub fn drag_apply(d: usize, e: &V3, p: &V3, par: DragParams) -> V3 {
    let l = norm(d, e);
    let q = dot(d, e, p);
    let mut out = [0.0; 3];
    for c in 0..d {
        out[c] = par.weight * (l * p[c] + (par.eps - 1.0) * q * e[c] / l);
    }
    out
}

/// The dense drag tensor `B(e)`.
pub fn drag_matrix(d: usize, e: &V3, par: DragParams) -> M3 {
    let l = norm(d, e);
    let mut out = [[0.0; 3]; 3];
    for r in 0..d {
        for c in 0..d {
            let id = if r == c { 1.0 } else { 0.0 };
            out[r][c] = par.weight * (l * id + (par.eps - 1.0) * e[r] * e[c] / l);
        }
    }
    out
}

/// Jacobian of `e -> B(e) p` with `p` held fixed: `out[c][r] = d(Bp)_c / de_r`.
pub fn drag_apply_de(d: usize, e: &V3, p: &V3, par: DragParams) -> M3 {
    let l = norm(d, e);
    let mut t = [0.0; 3];
    for c in 0..d {
        t[c] = e[c] / l;
    }
    let q_over_l = dot(d, &t, p); // (e . p) / l
    let em1 = par.eps - 1.0;
    let mut out = [[0.0; 3]; 3];
    for c in 0..d {
        for r in 0..d {
            let id = if r == c { 1.0 } else { 0.0 };
            out[c][r] =
                par.weight * (t[r] * p[c] + em1 * (p[r] * t[c] + q_over_l * (id - t[c] * t[r])));
        }
    }
    out
}

/// Mixed second derivative of `(e, p) -> B(e) p` contracted with an adjoint:
/// `out[r][s] = sum_c adj_c * d^2 (B p)_c / (de_r dp_s)`. Independent of `p`
/// because the map is linear in `p`.
pub fn drag_dednu_contract(d: usize, e: &V3, adj: &V3, par: DragParams) -> M3 {
    let l = norm(d, e);
    let mut t = [0.0; 3];
    for c in 0..d {
        t[c] = e[c] / l;
    }
    let c2 = dot(d, &t, adj);
    let em1 = par.eps - 1.0;
    let mut out = [[0.0; 3]; 3];
    for r in 0..d {
        for s in 0..d {
            let id = if r == s { 1.0 } else { 0.0 };
            out[r][s] =
                par.weight * (t[r] * adj[s] + em1 * (id * c2 + t[s] * (adj[r] - c2 * t[r])));
        }
    }
    out
}

/// Second derivative of `e -> B(e) nu` contracted with an adjoint vector:
/// `out[r][q] = sum_c adj_c * d^2 (B nu)_c / (de_r de_q)`. Symmetric.
pub fn drag_d2ee_contract(d: usize, e: &V3, nu: &V3, adj: &V3, par: DragParams) -> M3 {
    let l = norm(d, e);
    let mut t = [0.0; 3];
    for c in 0..d {
        t[c] = e[c] / l;
    }
    let c1 = dot(d, adj, nu);
    let c2 = dot(d, &t, adj);
    let c3 = dot(d, &t, nu);
    let em1 = par.eps - 1.0;
    // Projections of adj and nu off the tangent.
    let mut pa = [0.0; 3];
    let mut pn = [0.0; 3];
    for c in 0..d {
        pa[c] = adj[c] - c2 * t[c];
        pn[c] = nu[c] - c3 * t[c];
    }
    let mut out = [[0.0; 3]; 3];
    for r in 0..d {
        for q in 0..d {
            let id = if r == q { 1.0 } else { 0.0 };
            let proj = id - t[r] * t[q];
            let aniso = nu[r] * pa[q] + nu[q] * pa[r] - c3 * (t[q] * pa[r] + t[r] * pa[q])
                - c3 * c2 * proj;
            out[r][q] = par.weight / l * (c1 * proj + em1 * aniso);
        }
    }
    out
}

/// Quadratic drag form of one edge against a displacement `u`:
/// `f(e, u) = l |u|^2 + (eps - 1) (e . u)^2 / l`, equal to `<B u, u> / weight`.
#[derive(Debug, Clone)]
pub struct PairFormBundle {
    pub value: f64,
    pub de: V3,
    pub du: V3,
    pub dede: M3,
    pub dedu: M3, // [r][s] = d^2 f / (de_r du_s)
    pub dudu: M3,
}

pub fn pair_form(d: usize, e: &V3, u: &V3, eps: f64, want_hess: bool) -> PairFormBundle {
    let l = norm(d, e);
    let mut t = [0.0; 3];
    for c in 0..d {
        t[c] = e[c] / l;
    }
    let q = dot(d, e, u);
    let uu = dot(d, u, u);
    let em1 = eps - 1.0;
    let value = l * uu + em1 * q * q / l;

    let mut de = [0.0; 3];
    let mut du = [0.0; 3];
    for r in 0..d {
        de[r] = t[r] * uu + em1 * (2.0 * q * u[r] / l - q * q * t[r] / (l * l));
        du[r] = 2.0 * l * u[r] + 2.0 * em1 * q * e[r] / l;
    }

    let mut dede = [[0.0; 3]; 3];
    let mut dedu = [[0.0; 3]; 3];
    let mut dudu = [[0.0; 3]; 3];
    if want_hess {
        let q_over_l = q / l;
        for r in 0..d {
            for s in 0..d {
                let id = if r == s { 1.0 } else { 0.0 };
                let proj = id - t[r] * t[s];
                dudu[r][s] = 2.0 * l * id + 2.0 * em1 * e[r] * e[s] / l;
                dedu[r][s] =
                    2.0 * t[r] * u[s] + 2.0 * em1 * (u[r] * t[s] + q_over_l * (id - t[r] * t[s]));
                dede[r][s] = uu * proj / l
                    + 2.0 * em1
                        * (u[r] * u[s] / l - q_over_l / l * (u[r] * t[s] + u[s] * t[r]))
                    - em1 * q_over_l * q_over_l / l * proj
                    + 2.0 * em1 * q_over_l * q_over_l / l * t[r] * t[s];
            }
        }
    }
    PairFormBundle {
        value,
        de,
        du,
        dede,
        dedu,
        dudu,
    }
}

/// Derivatives of an edge length `l(e) = |e|`.
pub fn length_grad(d: usize, e: &V3) -> (f64, V3) {
    let l = norm(d, e);
    let mut g = [0.0; 3];
    for c in 0..d {
        g[c] = e[c] / l;
    }
    (l, g)
}

/// Hessian of an edge length: `(I - T T^T) / l`.
pub fn length_hess(d: usize, e: &V3) -> M3 {
    let l = norm(d, e);
    let mut out = [[0.0; 3]; 3];
    for r in 0..d {
        for c in 0..d {
            let id = if r == c { 1.0 } else { 0.0 };
            out[r][c] = (id - e[r] * e[c] / (l * l)) / l;
        }
    }
    out
}

/// Turning angle between consecutive edge vectors plus derivatives.
///
/// Layout: `u` is the incoming edge, `v` the outgoing edge. Cross blocks use
/// `duv[r][s] = d^2 theta / (du_r dv_s)`; `dvu` is its transpose.
#[derive(Debug, Clone)]
pub struct AngleBundle {
    pub theta: f64,
    pub du: V3,
    pub dv: V3,
    pub duu: M3,
    pub duv: M3,
    pub dvv: M3,
    /// Set when the spatial angle sits at the straight-configuration kink
    /// where its derivative is undefined; derivative slots are then zero.
    pub degenerate: bool,
}

/// Signed planar turning angle `atan2(cross(u, v), dot(u, v))`, positive for
/// a left turn. Separable: `theta = phi(v) - phi(u)` with `phi` the polar
/// angle, so the u-v cross block vanishes.
pub fn angle_bundle_2d(u: &V3, v: &V3, want_hess: bool) -> AngleBundle {
    let theta = (u[0] * v[1] - u[1] * v[0]).atan2(u[0] * v[0] + u[1] * v[1]);
    let (phi_u_g, phi_u_h) = polar_grad_hess(u, want_hess);
    let (phi_v_g, phi_v_h) = polar_grad_hess(v, want_hess);
    let mut du = [0.0; 3];
    let mut dv = [0.0; 3];
    let mut duu = [[0.0; 3]; 3];
    let mut dvv = [[0.0; 3]; 3];
    for r in 0..2 {
        du[r] = -phi_u_g[r];
        dv[r] = phi_v_g[r];
        for c in 0..2 {
            duu[r][c] = -phi_u_h[r][c];
            dvv[r][c] = phi_v_h[r][c];
        }
    }
    AngleBundle {
        theta,
        du,
        dv,
        duu,
        duv: [[0.0; 3]; 3],
        dvv,
        degenerate: false,
    }
}

fn polar_grad_hess(e: &V3, want_hess: bool) -> (V3, M3) {
    let (x, y) = (e[0], e[1]);
    let n2 = x * x + y * y;
    let g = [-y / n2, x / n2, 0.0];
    let mut h = [[0.0; 3]; 3];
    if want_hess {
        let n4 = n2 * n2;
        h[0][0] = 2.0 * x * y / n4;
        h[0][1] = (y * y - x * x) / n4;
        h[1][0] = h[0][1];
        h[1][1] = -2.0 * x * y / n4;
    }
    (g, h)
}

/// Unsigned spatial turning angle `atan2(|u x v|, u . v)` in `[0, pi]`.
///
/// At exactly straight or exactly reversed configurations the angle has a
/// kink; the bundle is then flagged degenerate with zero derivative slots.
pub fn angle_bundle_3d(u: &V3, v: &V3, want_hess: bool) -> AngleBundle {
    let cw = cross(u, v);
    let s2 = sq(&cw);
    let c = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    let a = sq(u) * sq(v); // |u|^2 |v|^2 == s^2 + c^2
    let s = s2.sqrt();
    let theta = s.atan2(c);
    if s2 <= 1e-28 * a {
        return AngleBundle {
            theta,
            du: [0.0; 3],
            dv: [0.0; 3],
            duu: [[0.0; 3]; 3],
            duv: [[0.0; 3]; 3],
            dvv: [[0.0; 3]; 3],
            degenerate: true,
        };
    }

    let p = cross(v, &cw); // s * ds/du
    let r = cross(&cw, u); // s * ds/dv
    let mut du = [0.0; 3];
    let mut dv = [0.0; 3];
    let mut big_p = [0.0; 3];
    let mut big_q = [0.0; 3];
    for i in 0..3 {
        big_p[i] = c * p[i] / s - s * v[i];
        big_q[i] = c * r[i] / s - s * u[i];
        du[i] = big_p[i] / a;
        dv[i] = big_q[i] / a;
    }

    let mut duu = [[0.0; 3]; 3];
    let mut duv = [[0.0; 3]; 3];
    let mut dvv = [[0.0; 3]; 3];
    if want_hess {
        let (uu, vv) = (sq(u), sq(v));
        let s3 = s * s2;
        // d(c/s)/du = v/s - c p / s^3, and with respect to v using r.
        let mut dcs_du = [0.0; 3];
        let mut dcs_dv = [0.0; 3];
        for j in 0..3 {
            dcs_du[j] = v[j] / s - c * p[j] / s3;
            dcs_dv[j] = u[j] / s - c * r[j] / s3;
        }
        for i in 0..3 {
            for j in 0..3 {
                let id = if i == j { 1.0 } else { 0.0 };
                // dP_i/du_j: P = (c/s) p - s v with dp/du = |v|^2 I - v v^T.
                let dp_du = vv * id - v[i] * v[j];
                let dpi_du = p[i] * dcs_du[j] + (c / s) * dp_du - v[i] * p[j] / s;
                duu[i][j] = dpi_du / a - big_p[i] * 2.0 * vv * u[j] / (a * a);

                // dp/dv = -[cw]_x + u v^T - c I.
                let dp_dv = -skew_entry(&cw, i, j) + u[i] * v[j] - c * id;
                let dpi_dv = p[i] * dcs_dv[j] + (c / s) * dp_dv - v[i] * r[j] / s - s * id;
                duv[i][j] = dpi_dv / a - big_p[i] * 2.0 * uu * v[j] / (a * a);

                // dQ_i/dv_j: Q = (c/s) r - s u with dr/dv = |u|^2 I - u u^T.
                let dr_dv = uu * id - u[i] * u[j];
                let dqi_dv = r[i] * dcs_dv[j] + (c / s) * dr_dv - u[i] * r[j] / s;
                dvv[i][j] = dqi_dv / a - big_q[i] * 2.0 * uu * v[j] / (a * a);
            }
        }
    }
    AngleBundle {
        theta,
        du,
        dv,
        duu,
        duv,
        dvv,
        degenerate: false,
    }
}

#[inline]
fn cross(a: &V3, b: &V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
fn sq(a: &V3) -> f64 {
    a[0] * a[0] + a[1] * a[1] + a[2] * a[2]
}

/// Entry `(i, j)` of the cross-product matrix `[a]_x`.
#[inline]
fn skew_entry(a: &V3, i: usize, j: usize) -> f64 {
    match (i, j) {
        (0, 1) => -a[2],
        (0, 2) => a[1],
        (1, 0) => a[2],
        (1, 2) => -a[0],
        (2, 0) => -a[1],
        (2, 1) => a[0],
        _ => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const FD_H: f64 = 1e-6;

    fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            let x0 = xp[i];
            xp[i] = x0 + FD_H;
            let fp = f(&xp);
            xp[i] = x0 - FD_H;
            let fm = f(&xp);
            xp[i] = x0;
            g[i] = (fp - fm) / (2.0 * FD_H);
        }
        g
    }

    fn sample_pairs(d: usize) -> Vec<(V3, V3)> {
        let mut out = Vec::new();
        let seeds: [(f64, f64); 4] = [(0.9, -0.4), (0.2, 1.3), (-1.1, 0.5), (0.7, 0.7)];
        for (i, (a, b)) in seeds.iter().enumerate() {
            let z = if d == 3 { 0.3 * (i as f64 + 1.0) } else { 0.0 };
            let e = [*a, *b, z];
            let u = [b * 0.3 - 0.2, a * 0.5 + 0.1, if d == 3 { -0.4 } else { 0.0 }];
            out.push((e, u));
        }
        out
    }

    #[test]
    fn drag_apply_matches_matrix() {
        for d in [2usize, 3] {
            for (e, p) in sample_pairs(d) {
                let par = DragParams {
                    eps: 0.35,
                    weight: 1.7,
                };
                let b = drag_matrix(d, &e, par);
                let byhand = drag_apply(d, &e, &p, par);
                for r in 0..d {
                    let mut acc = 0.0;
                    for c in 0..d {
                        acc += b[r][c] * p[c];
                    }
                    assert_abs_diff_eq!(acc, byhand[r], epsilon = 1e-13);
                }
            }
        }
    }

    #[test]
    fn drag_eigenvalues() {
        // Unit edge along x: tangential eigenvalue w*l*eps, normal w*l.
        let par = DragParams {
            eps: 0.5,
            weight: 1.0,
        };
        let e = [1.0, 0.0, 0.0];
        let b = drag_matrix(3, &e, par);
        assert_abs_diff_eq!(b[0][0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(b[1][1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b[2][2], 1.0, epsilon = 1e-15);
        // Length-2 edge doubles both.
        let e2 = [2.0, 0.0, 0.0];
        let b2 = drag_matrix(3, &e2, par);
        assert_abs_diff_eq!(b2[0][0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b2[1][1], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b2[2][2], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn drag_apply_de_matches_fd() {
        for d in [2usize, 3] {
            let par = DragParams {
                eps: 0.3,
                weight: 0.8,
            };
            for (e, p) in sample_pairs(d) {
                let jac = drag_apply_de(d, &e, &p, par);
                for c in 0..d {
                    let g = central_diff(
                        |x| {
                            let mut ee = [0.0; 3];
                            ee[..d].copy_from_slice(&x[..d]);
                            drag_apply(d, &ee, &p, par)[c]
                        },
                        &e[..d],
                    );
                    for r in 0..d {
                        assert_abs_diff_eq!(jac[c][r], g[r], epsilon = 1e-8);
                    }
                }
            }
        }
    }

    #[test]
    fn drag_dednu_contract_matches_jacobian_transpose() {
        // With the map linear in p, the contraction must satisfy
        // M u == J(e, u)^T adj exactly for every direction u.
        for d in [2usize, 3] {
            let par = DragParams {
                eps: 0.45,
                weight: 1.1,
            };
            let adj = [0.7, -0.2, if d == 3 { 0.9 } else { 0.0 }];
            for (e, u) in sample_pairs(d) {
                let m = drag_dednu_contract(d, &e, &adj, par);
                let jac = drag_apply_de(d, &e, &u, par);
                for r in 0..d {
                    let mut lhs = 0.0;
                    let mut rhs = 0.0;
                    for s in 0..d {
                        lhs += m[r][s] * u[s];
                    }
                    for c in 0..d {
                        rhs += adj[c] * jac[c][r];
                    }
                    assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-13);
                }
            }
        }
    }

    #[test]
    fn drag_d2ee_contract_matches_fd() {
        for d in [2usize, 3] {
            let par = DragParams {
                eps: 0.25,
                weight: 1.3,
            };
            let adj = [0.4, -0.9, if d == 3 { 0.6 } else { 0.0 }];
            for (e, nu) in sample_pairs(d) {
                let h = drag_d2ee_contract(d, &e, &nu, &adj, par);
                // FD of r -> sum_c adj_c d(B nu)_c/de_r.
                for r in 0..d {
                    let g = central_diff(
                        |x| {
                            let mut ee = [0.0; 3];
                            ee[..d].copy_from_slice(&x[..d]);
                            let jac = drag_apply_de(d, &ee, &nu, par);
                            let mut acc = 0.0;
                            for c in 0..d {
                                acc += adj[c] * jac[c][r];
                            }
                            acc
                        },
                        &e[..d],
                    );
                    for q in 0..d {
                        assert_abs_diff_eq!(h[r][q], g[q], epsilon = 1e-7);
                        assert_abs_diff_eq!(h[r][q], h[q][r], epsilon = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn pair_form_value_matches_drag_product() {
        for d in [2usize, 3] {
            for (e, u) in sample_pairs(d) {
                let par = DragParams {
                    eps: 0.45,
                    weight: 1.0,
                };
                let f = pair_form(d, &e, &u, par.eps, false);
                let bu = drag_apply(d, &e, &u, par);
                let mut quad = 0.0;
                for c in 0..d {
                    quad += bu[c] * u[c];
                }
                assert_abs_diff_eq!(f.value, quad, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn pair_form_derivatives_match_fd() {
        for d in [2usize, 3] {
            let eps = 0.3;
            for (e, u) in sample_pairs(d) {
                let b = pair_form(d, &e, &u, eps, true);
                // Gradient in e and u.
                let ge = central_diff(
                    |x| {
                        let mut ee = [0.0; 3];
                        ee[..d].copy_from_slice(&x[..d]);
                        pair_form(d, &ee, &u, eps, false).value
                    },
                    &e[..d],
                );
                let gu = central_diff(
                    |x| {
                        let mut uu = [0.0; 3];
                        uu[..d].copy_from_slice(&x[..d]);
                        pair_form(d, &e, &uu, eps, false).value
                    },
                    &u[..d],
                );
                for r in 0..d {
                    assert_abs_diff_eq!(b.de[r], ge[r], epsilon = 1e-7);
                    assert_abs_diff_eq!(b.du[r], gu[r], epsilon = 1e-7);
                }
                // Hessian blocks against FD of the analytic gradient.
                for s in 0..d {
                    let he = central_diff(
                        |x| {
                            let mut ee = [0.0; 3];
                            ee[..d].copy_from_slice(&x[..d]);
                            pair_form(d, &ee, &u, eps, false).de[s]
                        },
                        &e[..d],
                    );
                    let hu = central_diff(
                        |x| {
                            let mut uu = [0.0; 3];
                            uu[..d].copy_from_slice(&x[..d]);
                            pair_form(d, &e, &uu, eps, false).du[s]
                        },
                        &u[..d],
                    );
                    let hcross = central_diff(
                        |x| {
                            let mut uu = [0.0; 3];
                            uu[..d].copy_from_slice(&x[..d]);
                            pair_form(d, &e, &uu, eps, false).de[s]
                        },
                        &u[..d],
                    );
                    for r in 0..d {
                        assert_abs_diff_eq!(b.dede[s][r], he[r], epsilon = 1e-6);
                        assert_abs_diff_eq!(b.dudu[s][r], hu[r], epsilon = 1e-6);
                        assert_abs_diff_eq!(b.dedu[s][r], hcross[r], epsilon = 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn planar_angle_derivatives_match_fd() {
        let u = [1.0, 0.4, 0.0];
        let v = [0.8, -0.6, 0.0];
        let b = angle_bundle_2d(&u, &v, true);
        assert!(!b.degenerate);
        let gu = central_diff(
            |x| angle_bundle_2d(&[x[0], x[1], 0.0], &v, false).theta,
            &u[..2],
        );
        let gv = central_diff(
            |x| angle_bundle_2d(&u, &[x[0], x[1], 0.0], false).theta,
            &v[..2],
        );
        for r in 0..2 {
            assert_abs_diff_eq!(b.du[r], gu[r], epsilon = 1e-8);
            assert_abs_diff_eq!(b.dv[r], gv[r], epsilon = 1e-8);
        }
        for s in 0..2 {
            let hu = central_diff(
                |x| angle_bundle_2d(&[x[0], x[1], 0.0], &v, false).du[s],
                &u[..2],
            );
            let hv = central_diff(
                |x| angle_bundle_2d(&u, &[x[0], x[1], 0.0], false).dv[s],
                &v[..2],
            );
            for r in 0..2 {
                assert_abs_diff_eq!(b.duu[s][r], hu[r], epsilon = 1e-7);
                assert_abs_diff_eq!(b.dvv[s][r], hv[r], epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn spatial_angle_derivatives_match_fd() {
        let pairs = [
            ([1.0, 0.2, -0.3], [0.7, -0.5, 0.4]),
            ([0.4, 1.1, 0.2], [-0.3, 0.8, 0.9]),
        ];
        for (u, v) in pairs {
            let b = angle_bundle_3d(&u, &v, true);
            assert!(!b.degenerate);
            let gu = central_diff(|x| angle_bundle_3d(&pad(3, x), &v, false).theta, &u);
            let gv = central_diff(|x| angle_bundle_3d(&u, &pad(3, x), false).theta, &v);
            for r in 0..3 {
                assert_abs_diff_eq!(b.du[r], gu[r], epsilon = 1e-8);
                assert_abs_diff_eq!(b.dv[r], gv[r], epsilon = 1e-8);
            }
            for s in 0..3 {
                let huu = central_diff(|x| angle_bundle_3d(&pad(3, x), &v, false).du[s], &u);
                let huv = central_diff(|x| angle_bundle_3d(&u, &pad(3, x), false).du[s], &v);
                let hvv = central_diff(|x| angle_bundle_3d(&u, &pad(3, x), false).dv[s], &v);
                for r in 0..3 {
                    assert_abs_diff_eq!(b.duu[s][r], huu[r], epsilon = 1e-7);
                    assert_abs_diff_eq!(b.duv[s][r], huv[r], epsilon = 1e-7);
                    assert_abs_diff_eq!(b.dvv[s][r], hvv[r], epsilon = 1e-7);
                }
            }
        }
    }

    #[test]
    fn spatial_angle_consistent_with_planar_magnitude() {
        let u = [1.0, 0.3, 0.0];
        let v = [0.5, 0.9, 0.0];
        let planar = angle_bundle_2d(&u, &v, false).theta;
        let spatial = angle_bundle_3d(&u, &v, false).theta;
        assert_abs_diff_eq!(spatial, planar.abs(), epsilon = 1e-14);
    }

    #[test]
    fn straight_spatial_angle_is_flagged() {
        let u = [1.0, 0.0, 0.0];
        let v = [2.0, 0.0, 0.0];
        let b = angle_bundle_3d(&u, &v, true);
        assert!(b.degenerate);
        assert_abs_diff_eq!(b.theta, 0.0, epsilon = 1e-15);
    }
}
