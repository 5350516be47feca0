//! Direct solver for symmetric block-tridiagonal systems with an optional
//! cyclic corner block.
//!
//! Newton systems over motion paths couple only adjacent frames, so their
//! matrices are block tridiagonal with one dense block per frame (plus
//! attached constraint rows). Periodic problems additionally couple the last
//! frame back to the first; that single corner block is handled by treating
//! node 0 as a border: the chain is eliminated first and the node-0 Schur
//! complement last, keeping the factorization O(number of nodes) with a
//! fixed elimination order so repeated runs are bitwise identical.

use nalgebra::{DMatrix, DVector, LU};
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum LinearError {
    #[error("pivot block {0} is singular")]
    SingularBlock(usize),
    #[error("dimension mismatch: {0}")]
    Mismatch(String),
}

/// Symmetric block-tridiagonal matrix with per-node block sizes and an
/// optional corner coupling `A(last, 0)`.
///
/// Storage holds the diagonal blocks in full, the subdiagonal blocks
/// `A(k+1, k)`, and the corner; superdiagonal blocks and the opposite corner
/// are implied by symmetry.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    diag: Vec<DMatrix<f64>>,
    lower: Vec<DMatrix<f64>>,
    corner: Option<DMatrix<f64>>,
}

impl BlockSystem {
    pub fn new(sizes: Vec<usize>) -> Self {
        assert!(!sizes.is_empty());
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        let mut acc = 0;
        for &s in &sizes {
            offsets.push(acc);
            acc += s;
        }
        offsets.push(acc);
        let diag = sizes.iter().map(|&s| DMatrix::zeros(s, s)).collect();
        let lower = (0..sizes.len().saturating_sub(1))
            .map(|k| DMatrix::zeros(sizes[k + 1], sizes[k]))
            .collect();
        Self {
            sizes,
            offsets,
            diag,
            lower,
            corner: None,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn total_dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn offset(&self, node: usize) -> usize {
        self.offsets[node]
    }

    pub fn diag_mut(&mut self, k: usize) -> &mut DMatrix<f64> {
        &mut self.diag[k]
    }

    pub fn diag_block(&self, k: usize) -> &DMatrix<f64> {
        &self.diag[k]
    }

    /// Block `A(k+1, k)`.
    pub fn lower_mut(&mut self, k: usize) -> &mut DMatrix<f64> {
        &mut self.lower[k]
    }

    pub fn lower_block(&self, k: usize) -> &DMatrix<f64> {
        &self.lower[k]
    }

    pub fn corner_block(&self) -> Option<&DMatrix<f64>> {
        self.corner.as_ref()
    }

    /// Enables and returns the corner block `A(last, 0)`. Only meaningful
    /// with at least three nodes; smaller cyclic systems fold the corner
    /// into the band before reaching this type.
    pub fn corner_mut(&mut self) -> &mut DMatrix<f64> {
        assert!(
            self.sizes.len() >= 3,
            "corner coupling requires at least three nodes"
        );
        let (s_last, s0) = (self.sizes[self.sizes.len() - 1], self.sizes[0]);
        self.corner
            .get_or_insert_with(|| DMatrix::zeros(s_last, s0))
    }

    pub fn zero_all(&mut self) {
        for d in &mut self.diag {
            d.fill(0.0);
        }
        for l in &mut self.lower {
            l.fill(0.0);
        }
        if let Some(c) = &mut self.corner {
            c.fill(0.0);
        }
    }

    /// Dense expansion, for tests and small reference solves.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.total_dim();
        let mut out = DMatrix::zeros(n, n);
        for k in 0..self.num_nodes() {
            let o = self.offsets[k];
            out.view_mut((o, o), (self.sizes[k], self.sizes[k]))
                .copy_from(&self.diag[k]);
            if k + 1 < self.num_nodes() {
                let o2 = self.offsets[k + 1];
                out.view_mut((o2, o), (self.sizes[k + 1], self.sizes[k]))
                    .copy_from(&self.lower[k]);
                out.view_mut((o, o2), (self.sizes[k], self.sizes[k + 1]))
                    .copy_from(&self.lower[k].transpose());
            }
        }
        if let Some(c) = &self.corner {
            let ol = self.offsets[self.num_nodes() - 1];
            out.view_mut((ol, 0), c.shape()).copy_from(c);
            out.view_mut((0, ol), (c.ncols(), c.nrows()))
                .copy_from(&c.transpose());
        }
        out
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.total_dim());
        for k in 0..self.num_nodes() {
            let o = self.offsets[k];
            let s = self.sizes[k];
            let xk = x.rows(o, s);
            y.rows_mut(o, s).axpy(1.0, &(&self.diag[k] * &xk), 1.0);
            if k + 1 < self.num_nodes() {
                let o2 = self.offsets[k + 1];
                let s2 = self.sizes[k + 1];
                let xk1 = x.rows(o2, s2);
                y.rows_mut(o2, s2).axpy(1.0, &(&self.lower[k] * &xk), 1.0);
                y.rows_mut(o, s)
                    .axpy(1.0, &(self.lower[k].transpose() * &xk1), 1.0);
            }
        }
        if let Some(c) = &self.corner {
            let ol = self.offsets[self.num_nodes() - 1];
            let sl = self.sizes[self.num_nodes() - 1];
            let s0 = self.sizes[0];
            let x0 = x.rows(0, s0);
            let xl = x.rows(ol, sl);
            y.rows_mut(ol, sl).axpy(1.0, &(c * &x0), 1.0);
            y.rows_mut(0, s0).axpy(1.0, &(c.transpose() * &xl), 1.0);
        }
        y
    }

    /// Adds `s * I` to every diagonal block (uniform regularization).
    pub fn shift_diagonal(&mut self, s: f64) {
        for d in &mut self.diag {
            for i in 0..d.nrows() {
                d[(i, i)] += s;
            }
        }
    }

    pub fn factorize(&self) -> Result<BlockFactor, LinearError> {
        let m = self.num_nodes();
        if self.corner.is_none() || m < 3 {
            if self.corner.is_some() {
                return Err(LinearError::Mismatch(
                    "corner block on a system with fewer than three nodes".into(),
                ));
            }
            return self.factorize_chain();
        }
        self.factorize_bordered()
    }

    fn factorize_chain(&self) -> Result<BlockFactor, LinearError> {
        let m = self.num_nodes();
        let mut facs = Vec::with_capacity(m);
        let mut xmats = Vec::with_capacity(m.saturating_sub(1));
        let mut d = self.diag[0].clone();
        for k in 0..m {
            let f = LU::new(d.clone());
            if !f.is_invertible() {
                return Err(LinearError::SingularBlock(k));
            }
            if k + 1 < m {
                let x = f
                    .solve(&self.lower[k].transpose())
                    .ok_or(LinearError::SingularBlock(k))?;
                d = &self.diag[k + 1] - &self.lower[k] * &x;
                xmats.push(x);
            }
            facs.push(f);
        }
        Ok(BlockFactor {
            sizes: self.sizes.clone(),
            offsets: self.offsets.clone(),
            lower: self.lower.clone(),
            facs,
            xmats,
            border: None,
        })
    }

    fn factorize_bordered(&self) -> Result<BlockFactor, LinearError> {
        let m = self.num_nodes();
        let corner = self.corner.as_ref().unwrap();
        let mut facs: Vec<LU<f64, nalgebra::Dyn, nalgebra::Dyn>> = Vec::with_capacity(m);
        let mut xmats = Vec::with_capacity(m - 2);
        let mut ymats = Vec::with_capacity(m - 1);
        let mut wstrips = Vec::with_capacity(m - 1);
        let mut schur = self.diag[0].clone();

        // Chain nodes 1..m-1; node 0 is the border.
        let mut d = self.diag[1].clone();
        let mut w = self.lower[0].clone();
        for k in 1..m {
            let f = LU::new(d.clone());
            if !f.is_invertible() {
                return Err(LinearError::SingularBlock(k));
            }
            let y = f.solve(&w).ok_or(LinearError::SingularBlock(k))?;
            schur -= w.transpose() * &y;
            if k + 1 < m {
                let x = f
                    .solve(&self.lower[k].transpose())
                    .ok_or(LinearError::SingularBlock(k))?;
                d = &self.diag[k + 1] - &self.lower[k] * &x;
                let mut wnext = if k + 1 == m - 1 {
                    corner.clone()
                } else {
                    DMatrix::zeros(self.sizes[k + 1], self.sizes[0])
                };
                wnext -= &self.lower[k] * &y;
                xmats.push(x);
                wstrips.push(std::mem::replace(&mut w, wnext));
            } else {
                wstrips.push(w.clone());
            }
            ymats.push(y);
            facs.push(f);
        }
        let f0 = LU::new(schur);
        if !f0.is_invertible() {
            return Err(LinearError::SingularBlock(0));
        }
        facs.push(f0);
        Ok(BlockFactor {
            sizes: self.sizes.clone(),
            offsets: self.offsets.clone(),
            lower: self.lower.clone(),
            facs,
            xmats,
            border: Some(Border { ymats, wstrips }),
        })
    }
}

struct Border {
    // Per chain node k = 1..m-1: Y_k = F_k^-1 W_k and the transformed
    // border strips W_k themselves.
    ymats: Vec<DMatrix<f64>>,
    wstrips: Vec<DMatrix<f64>>,
}

/// Factorized [`BlockSystem`]; solves in O(nodes) with a fixed sweep order.
pub struct BlockFactor {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    lower: Vec<DMatrix<f64>>,
    facs: Vec<LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    xmats: Vec<DMatrix<f64>>,
    border: Option<Border>,
}

impl BlockFactor {
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>, LinearError> {
        if b.len() != *self.offsets.last().unwrap() {
            return Err(LinearError::Mismatch(format!(
                "rhs has {} entries, system has {}",
                b.len(),
                self.offsets.last().unwrap()
            )));
        }
        match &self.border {
            None => self.solve_chain(b),
            Some(border) => self.solve_bordered(b, border),
        }
    }

    fn node(&self, b: &DVector<f64>, k: usize) -> DVector<f64> {
        DVector::from(b.rows(self.offsets[k], self.sizes[k]))
    }

    fn solve_chain(&self, b: &DVector<f64>) -> Result<DVector<f64>, LinearError> {
        let m = self.sizes.len();
        let mut ys: Vec<DVector<f64>> = Vec::with_capacity(m);
        for k in 0..m {
            let mut rhs = self.node(b, k);
            if k > 0 {
                rhs -= &self.lower[k - 1] * &ys[k - 1];
            }
            let y = self.facs[k]
                .solve(&rhs)
                .ok_or(LinearError::SingularBlock(k))?;
            ys.push(y);
        }
        for k in (0..m.saturating_sub(1)).rev() {
            let corr = &self.xmats[k] * &ys[k + 1];
            ys[k] -= corr;
        }
        let mut out = DVector::zeros(b.len());
        for k in 0..m {
            out.rows_mut(self.offsets[k], self.sizes[k]).copy_from(&ys[k]);
        }
        Ok(out)
    }

    fn solve_bordered(
        &self,
        b: &DVector<f64>,
        border: &Border,
    ) -> Result<DVector<f64>, LinearError> {
        let m = self.sizes.len();
        // facs[0..m-1] factor chain nodes 1..m-1; facs[m-1] factors the
        // node-0 Schur complement.
        let mut vs: Vec<DVector<f64>> = Vec::with_capacity(m - 1);
        for k in 1..m {
            let mut rhs = self.node(b, k);
            if k > 1 {
                rhs -= &self.lower[k - 1] * &vs[k - 2];
            }
            let v = self.facs[k - 1]
                .solve(&rhs)
                .ok_or(LinearError::SingularBlock(k))?;
            vs.push(v);
        }
        let mut s = self.node(b, 0);
        for (k, v) in vs.iter().enumerate() {
            s -= border.wstrips[k].transpose() * v;
        }
        let x0 = self.facs[m - 1]
            .solve(&s)
            .ok_or(LinearError::SingularBlock(0))?;
        // Back substitution over the chain, last node first.
        let last = m - 2;
        let corr = &border.ymats[last] * &x0;
        vs[last] -= corr;
        for k in (0..last).rev() {
            let corr = &self.xmats[k] * &vs[k + 1] + &border.ymats[k] * &x0;
            vs[k] -= corr;
        }
        let mut out = DVector::zeros(b.len());
        out.rows_mut(0, self.sizes[0]).copy_from(&x0);
        for k in 1..m {
            out.rows_mut(self.offsets[k], self.sizes[k])
                .copy_from(&vs[k - 1]);
        }
        Ok(out)
    }
}
