//! Scatter of local derivative windows into path-global structures.
//!
//! Energy and constraint terms touch a small window of vertices in one or
//! two adjacent frames. Kernels accumulate a window gradient and a window
//! Hessian over up to six points; the scatter step maps window slots to
//! `(frame, vertex)` pairs and adds into the global gradient vector and the
//! block-tridiagonal Hessian.

use nalgebra::DVector;

use crate::dissipation::kernels::{M3, V3};
use crate::sparse::BlockTridiagMatrix;

pub const MAX_WINDOW: usize = 18; // six points, three coordinates each

/// A chain-rule term: window point index and linear coefficient.
pub type Chain = [(usize, f64)];

#[derive(Debug, Clone)]
pub struct WGrad {
    pub dim: usize,
    pub v: [f64; MAX_WINDOW],
}

impl WGrad {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            v: [0.0; MAX_WINDOW],
        }
    }

    /// Adds `scale * coeff * vec` to every point in the chain.
    pub fn add(&mut self, chain: &Chain, vec: &V3, scale: f64) {
        for &(p, coeff) in chain {
            for c in 0..self.dim {
                self.v[p * self.dim + c] += scale * coeff * vec[c];
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct WHess {
    pub dim: usize,
    pub m: [[f64; MAX_WINDOW]; MAX_WINDOW],
}

impl WHess {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            m: [[0.0; MAX_WINDOW]; MAX_WINDOW],
        }
    }

    /// Adds `scale * ca * cb * mat[r][c]` over the chain pair; rows follow
    /// `a`, columns follow `b`. Set `transpose` to use `mat[c][r]` instead.
    pub fn add_mat(&mut self, a: &Chain, b: &Chain, mat: &M3, scale: f64, transpose: bool) {
        let d = self.dim;
        for &(p, ca) in a {
            for &(q, cb) in b {
                let f = scale * ca * cb;
                for r in 0..d {
                    for c in 0..d {
                        let v = if transpose { mat[c][r] } else { mat[r][c] };
                        self.m[p * d + r][q * d + c] += f * v;
                    }
                }
            }
        }
    }

    /// Adds the rank-one block `scale * (va vb^T)`; rows follow `a`.
    pub fn add_outer(&mut self, a: &Chain, va: &V3, b: &Chain, vb: &V3, scale: f64) {
        let d = self.dim;
        for &(p, ca) in a {
            for &(q, cb) in b {
                let f = scale * ca * cb;
                for r in 0..d {
                    for c in 0..d {
                        self.m[p * d + r][q * d + c] += f * va[r] * vb[c];
                    }
                }
            }
        }
    }

    /// Largest asymmetry over the active part; assembly sanity check.
    #[cfg(test)]
    pub fn max_asymmetry(&self, npts: usize) -> f64 {
        let n = npts * self.dim;
        let mut worst = 0.0_f64;
        for r in 0..n {
            for c in 0..r {
                worst = worst.max((self.m[r][c] - self.m[c][r]).abs());
            }
        }
        worst
    }
}

/// Adds a window gradient into the path-global gradient vector.
pub fn scatter_grad(
    points: &[(usize, usize)],
    dim: usize,
    n_verts: usize,
    wg: &WGrad,
    grad: &mut DVector<f64>,
) {
    for (p, &(frame, vert)) in points.iter().enumerate() {
        let base = (frame * n_verts + vert) * dim;
        for c in 0..dim {
            grad[base + c] += wg.v[p * dim + c];
        }
    }
}

/// Adds a symmetric window Hessian into the block-tridiagonal global matrix.
///
/// The window must be complete and symmetric; cross-frame blocks with the
/// row frame below the column frame are skipped since the global storage
/// mirrors them implicitly.
pub fn scatter_hess(
    points: &[(usize, usize)],
    dim: usize,
    n_verts: usize,
    wh: &WHess,
    hess: &mut BlockTridiagMatrix,
) {
    for (p, &(fp, vp)) in points.iter().enumerate() {
        for (q, &(fq, vq)) in points.iter().enumerate() {
            if fp < fq {
                continue;
            }
            let row_base = (fp * n_verts + vp) * dim;
            let col_base = (fq * n_verts + vq) * dim;
            for r in 0..dim {
                for c in 0..dim {
                    let v = wh.m[p * dim + r][q * dim + c];
                    if v != 0.0 {
                        hess.add(row_base + r, col_base + c, v);
                    }
                }
            }
        }
    }
}
