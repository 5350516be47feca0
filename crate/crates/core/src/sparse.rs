//! Block-tridiagonal symmetric storage for time-structured Hessians.
//!
//! Energies on motion paths sum over time intervals, so second derivatives
//! couple only coordinates of the same or of adjacent frames. The matrix is
//! stored as dense frame-size blocks on the diagonal and the first
//! subdiagonal; the superdiagonal is implied by symmetry.

use nalgebra::{DMatrix, DVector};

/// Symmetric block-tridiagonal matrix with square blocks of one size.
#[derive(Debug, Clone)]
pub struct BlockTridiagMatrix {
    block_size: usize,
    /// Diagonal blocks, one per frame.
    diag: Vec<DMatrix<f64>>,
    /// Subdiagonal blocks; `lower[k]` couples frame `k + 1` (rows) to frame `k` (columns).
    lower: Vec<DMatrix<f64>>,
}

impl BlockTridiagMatrix {
    pub fn zeros(num_blocks: usize, block_size: usize) -> Self {
        assert!(num_blocks >= 1);
        Self {
            block_size,
            diag: vec![DMatrix::zeros(block_size, block_size); num_blocks],
            lower: vec![DMatrix::zeros(block_size, block_size); num_blocks - 1],
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn dim(&self) -> usize {
        self.block_size * self.diag.len()
    }

    pub fn diag_block(&self, k: usize) -> &DMatrix<f64> {
        &self.diag[k]
    }

    pub fn diag_block_mut(&mut self, k: usize) -> &mut DMatrix<f64> {
        &mut self.diag[k]
    }

    /// Block coupling frame `k + 1` (rows) to frame `k` (columns).
    pub fn lower_block(&self, k: usize) -> &DMatrix<f64> {
        &self.lower[k]
    }

    pub fn lower_block_mut(&mut self, k: usize) -> &mut DMatrix<f64> {
        &mut self.lower[k]
    }

    /// Adds `v` at global position `(row, col)` in the stored lower triangle.
    ///
    /// Callers assemble the diagonal blocks in full and cross-frame couplings
    /// through their lower block only; the upper mirror is implied. Panics on
    /// entries in an upper cross-block or outside the tridiagonal band.
    pub fn add(&mut self, row: usize, col: usize, v: f64) {
        if v == 0.0 {
            return;
        }
        let bs = self.block_size;
        let (br, ir) = (row / bs, row % bs);
        let (bc, ic) = (col / bs, col % bs);
        if br == bc {
            self.diag[br][(ir, ic)] += v;
        } else if br == bc + 1 {
            self.lower[bc][(ir, ic)] += v;
        } else {
            panic!("entry ({row}, {col}) is not in the stored lower band");
        }
    }

    /// `out = self * x`.
    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let bs = self.block_size;
        let nb = self.diag.len();
        assert_eq!(x.len(), self.dim());
        let mut out = DVector::zeros(x.len());
        for k in 0..nb {
            let xk = x.rows(k * bs, bs);
            let mut acc = &self.diag[k] * &xk;
            if k > 0 {
                acc += &self.lower[k - 1] * x.rows((k - 1) * bs, bs);
            }
            if k + 1 < nb {
                acc += self.lower[k].transpose() * x.rows((k + 1) * bs, bs);
            }
            out.rows_mut(k * bs, bs).copy_from(&acc);
        }
        out
    }

    /// Dense copy, for tests and small systems.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let bs = self.block_size;
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for (k, b) in self.diag.iter().enumerate() {
            out.view_mut((k * bs, k * bs), (bs, bs)).copy_from(b);
        }
        for (k, b) in self.lower.iter().enumerate() {
            out.view_mut(((k + 1) * bs, k * bs), (bs, bs)).copy_from(b);
            out.view_mut((k * bs, (k + 1) * bs), (bs, bs))
                .copy_from(&b.transpose());
        }
        out
    }

    /// Largest absolute asymmetry of the diagonal blocks (the off-diagonal
    /// blocks are symmetric by storage). Useful as an assembly diagnostic.
    pub fn max_diag_asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for b in &self.diag {
            for r in 0..self.block_size {
                for c in 0..r {
                    worst = worst.max((b[(r, c)] - b[(c, r)]).abs());
                }
            }
        }
        worst
    }
}
