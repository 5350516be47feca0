//! Reduced nonlinear program over the free frames of a motion path.
//!
//! Boundary conditions are eliminated rather than enforced by rows: fixed
//! frames disappear from the unknowns, and cyclic problems substitute the
//! final frame by the displaced first frame, which turns the Hessian band
//! cyclic (one corner block) instead of adding multipliers. The remaining
//! constraints are the per-interval momentum rows plus optional frame-local
//! rows (edge lengths, centroid anchor, final-frame stationarity) and
//! minimum-edge-length inequalities guarding against collapse.
//!
//! Solving proceeds in two phases sharing one block factorization: an
//! augmented Lagrangian loop with damped Newton inner iterations drives the
//! iterate into the feasible basin, then a primal-dual Newton polish on the
//! stationarity system sharpens feasibility and optimality to the requested
//! tolerances.

use nalgebra::{DMatrix, DVector};

use crate::constraints::{
    anchor_window, registration_window, edge_length_window, momentum_rows, momentum_window,
};
use crate::dissipation::{eval_path, DissipationError, DissipationParams, EvalRequest};
use crate::sparse::BlockTridiagMatrix;

use super::linear::{BlockSystem, LinearError};
use super::SolveOptions;

pub(crate) enum Regime {
    /// Frames 0 and K prescribed; unknowns 1..K-1.
    FixedEnds { x0: Vec<f64>, xk: Vec<f64> },
    /// Frame 0 prescribed, final frame free but subject to stationarity of
    /// the prescribed displacement; unknowns 1..K.
    Displacement { x0: Vec<f64>, targets: Vec<f64> },
    /// Final frame substituted by the displaced first frame; unknowns
    /// 0..K-1. `rot` is row-major `d x d`.
    Cyclic { rot: Vec<f64>, trans: Vec<f64> },
}

pub(crate) struct NlpConfig {
    pub momentum: bool,
    /// Edge indices and target lengths enforced on every free shape frame.
    pub iso_edges: Vec<usize>,
    pub iso_targets: Vec<f64>,
    /// Centroid target on frame 0 (cyclic problems only).
    pub anchor: Option<Vec<f64>>,
    /// Minimum edge length on frame 0 (cyclic problems only), as
    /// inequalities.
    pub min_len: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ConsKind {
    Momentum { interval: usize },
    Iso { frame: usize },
    Anchor,
    Registration,
}

#[derive(Debug, Clone, Copy)]
struct ConsBlock {
    kind: ConsKind,
    node: usize,
    rows: usize,
    offset: usize,
}

pub(crate) struct PathNlp {
    pub dim: usize,
    pub n: usize,
    pub k: usize,
    pub params: DissipationParams,
    pub regime: Regime,
    pub config: NlpConfig,
    blocks: Vec<ConsBlock>,
    eq_rows: usize,
}

#[derive(Debug)]
pub(crate) enum Failure {
    Eval(DissipationError),
    Linear(LinearError),
    Stalled(String),
}

impl From<LinearError> for Failure {
    fn from(e: LinearError) -> Self {
        Failure::Linear(e)
    }
}

pub(crate) struct Solved {
    pub z: DVector<f64>,
    pub energy: f64,
    pub feasibility: f64,
    pub optimality: f64,
    pub iterations: usize,
    pub outer_iterations: usize,
    pub polish_iterations: usize,
    pub converged: bool,
    pub multipliers: DVector<f64>,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.amax()
    }
}

impl PathNlp {
    pub fn new(
        dim: usize,
        n: usize,
        k: usize,
        params: DissipationParams,
        regime: Regime,
        config: NlpConfig,
    ) -> Self {
        assert!(k >= 1);
        if config.anchor.is_some() || config.min_len.is_some() {
            assert!(
                matches!(regime, Regime::Cyclic { .. }),
                "frame-0 anchor and length bounds apply to cyclic problems"
            );
        }
        let mut nlp = Self {
            dim,
            n,
            k,
            params,
            regime,
            config,
            blocks: Vec::new(),
            eq_rows: 0,
        };
        nlp.build_blocks();
        nlp
    }

    pub fn nd(&self) -> usize {
        self.n * self.dim
    }

    /// First free frame and number of free frames; always contiguous.
    pub fn free_frames(&self) -> (usize, usize) {
        match self.regime {
            Regime::FixedEnds { .. } => (1, self.k - 1),
            Regime::Displacement { .. } => (1, self.k),
            Regime::Cyclic { .. } => (0, self.k),
        }
    }

    fn num_nodes(&self) -> usize {
        self.free_frames().1
    }

    pub fn num_unknowns(&self) -> usize {
        self.num_nodes() * self.nd()
    }

    pub fn eq_rows(&self) -> usize {
        self.eq_rows
    }

    /// Node index of a path frame, flagging the substituted cyclic end
    /// (whose columns carry the rotation fold).
    fn frame_node(&self, frame: usize) -> Option<(usize, bool)> {
        let (first, count) = self.free_frames();
        match &self.regime {
            Regime::Cyclic { .. } if frame == self.k => Some((0, true)),
            _ => {
                if frame >= first && frame < first + count {
                    Some((frame - first, false))
                } else {
                    None
                }
            }
        }
    }

    fn build_blocks(&mut self) {
        let m = momentum_rows(self.dim);
        let mut blocks = Vec::new();
        let mut offset = 0;
        if self.config.momentum && self.num_nodes() > 0 {
            for interval in 0..self.k {
                // Attach to the later frame's node when that frame is free,
                // otherwise to the earlier one; both keep the band adjacent.
                let node = self
                    .frame_node(interval + 1)
                    .or_else(|| self.frame_node(interval))
                    .expect("momentum interval without free frames")
                    .0;
                blocks.push(ConsBlock {
                    kind: ConsKind::Momentum { interval },
                    node,
                    rows: m,
                    offset,
                });
                offset += m;
            }
        }
        if !self.config.iso_edges.is_empty() {
            let (first, count) = self.free_frames();
            for f in first..first + count {
                blocks.push(ConsBlock {
                    kind: ConsKind::Iso { frame: f },
                    node: f - first,
                    rows: self.config.iso_edges.len(),
                    offset,
                });
                offset += self.config.iso_edges.len();
            }
        }
        if self.config.anchor.is_some() {
            blocks.push(ConsBlock {
                kind: ConsKind::Anchor,
                node: 0,
                rows: self.dim,
                offset,
            });
            offset += self.dim;
        }
        if matches!(self.regime, Regime::Displacement { .. }) {
            blocks.push(ConsBlock {
                kind: ConsKind::Registration,
                node: self.num_nodes() - 1,
                rows: m,
                offset,
            });
            offset += m;
        }
        self.eq_rows = offset;
        self.blocks = blocks;
    }

    fn ineq_rows(&self) -> usize {
        if self.config.min_len.is_some() {
            self.n - 1
        } else {
            0
        }
    }

    fn rot(&self) -> Option<&[f64]> {
        match &self.regime {
            Regime::Cyclic { rot, .. } => Some(rot),
            _ => None,
        }
    }

    /// Full `(K+1)`-frame coordinates implied by the unknowns.
    pub fn full_flat(&self, z: &DVector<f64>) -> Vec<f64> {
        let nd = self.nd();
        let mut flat = vec![0.0; (self.k + 1) * nd];
        let (first, count) = self.free_frames();
        for j in 0..count {
            flat[(first + j) * nd..(first + j + 1) * nd]
                .copy_from_slice(&z.as_slice()[j * nd..(j + 1) * nd]);
        }
        match &self.regime {
            Regime::FixedEnds { x0, xk } => {
                flat[..nd].copy_from_slice(x0);
                flat[self.k * nd..].copy_from_slice(xk);
            }
            Regime::Displacement { x0, .. } => {
                flat[..nd].copy_from_slice(x0);
            }
            Regime::Cyclic { rot, trans } => {
                let d = self.dim;
                let (head, tail) = flat.split_at_mut(self.k * nd);
                for i in 0..self.n {
                    for r in 0..d {
                        let mut acc = trans[r];
                        for c in 0..d {
                            acc += rot[r * d + c] * head[i * d + c];
                        }
                        tail[i * d + r] = acc;
                    }
                }
            }
        }
        flat
    }

    pub fn z_from_path_flat(&self, flat: &[f64]) -> DVector<f64> {
        let nd = self.nd();
        let (first, count) = self.free_frames();
        let mut z = DVector::zeros(count * nd);
        for j in 0..count {
            z.as_mut_slice()[j * nd..(j + 1) * nd]
                .copy_from_slice(&flat[(first + j) * nd..(first + j + 1) * nd]);
        }
        z
    }

    // Rotation folds for the substituted end frame: rows pick up a factor
    // R^T per vertex, columns a factor R.
    fn fold_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let rot = self.rot().expect("fold without cyclic regime");
        let d = self.dim;
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for i in 0..self.n {
            for r in 0..d {
                for c in 0..m.ncols() {
                    let mut acc = 0.0;
                    for s in 0..d {
                        acc += rot[s * d + r] * m[(i * d + s, c)];
                    }
                    out[(i * d + r, c)] = acc;
                }
            }
        }
        out
    }

    fn fold_cols(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let rot = self.rot().expect("fold without cyclic regime");
        let d = self.dim;
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for r in 0..m.nrows() {
            for j in 0..self.n {
                for c in 0..d {
                    let mut acc = 0.0;
                    for s in 0..d {
                        acc += m[(r, j * d + s)] * rot[s * d + c];
                    }
                    out[(r, j * d + c)] = acc;
                }
            }
        }
        out
    }

    fn fold_grad_frame(&self, g: &[f64], out: &mut [f64]) {
        let rot = self.rot().expect("fold without cyclic regime");
        let d = self.dim;
        for i in 0..self.n {
            for r in 0..d {
                let mut acc = 0.0;
                for s in 0..d {
                    acc += rot[s * d + r] * g[i * d + s];
                }
                out[i * d + r] += acc;
            }
        }
    }

    /// Places an already-folded coupling block at node pair
    /// `(node_r, node_c)`; the mirror entry is implied by symmetry.
    /// Same-node blocks must contain both orientations before the call.
    fn add_block(&self, sys: &mut BlockSystem, node_r: usize, node_c: usize, m: &DMatrix<f64>) {
        let last = sys.num_nodes() - 1;
        if node_r == node_c {
            *sys.diag_mut(node_r) += m;
        } else if node_r == node_c + 1 {
            *sys.lower_mut(node_c) += m;
        } else if node_c == node_r + 1 {
            *sys.lower_mut(node_r) += m.transpose();
        } else if node_r == last && node_c == 0 {
            *sys.corner_mut() += m;
        } else if node_c == last && node_r == 0 {
            *sys.corner_mut() += m.transpose();
        } else {
            unreachable!("non-adjacent node coupling {node_r} vs {node_c}");
        }
    }

    fn new_hess_nodes(&self) -> BlockSystem {
        let nodes = self.num_nodes();
        let mut sys = BlockSystem::new(vec![self.nd(); nodes]);
        if matches!(self.regime, Regime::Cyclic { .. }) && nodes >= 3 {
            sys.corner_mut();
        }
        sys
    }

    /// Energy with folded gradient and Hessian over the unknowns.
    pub fn energy(
        &self,
        z: &DVector<f64>,
        mut grad: Option<&mut DVector<f64>>,
        hess: Option<&mut BlockSystem>,
    ) -> Result<f64, DissipationError> {
        let flat = self.full_flat(z);
        let nd = self.nd();
        let mut full_grad = if grad.is_some() || hess.is_some() {
            Some(DVector::zeros(flat.len()))
        } else {
            None
        };
        let mut full_hess = if hess.is_some() {
            Some(BlockTridiagMatrix::zeros(self.k + 1, nd))
        } else {
            None
        };
        let value = eval_path(
            self.dim,
            self.n,
            &flat,
            self.k,
            &self.params,
            EvalRequest {
                grad: full_grad.as_mut(),
                hess: full_hess.as_mut(),
                per_interval: None,
            },
        )?;

        if let Some(g) = grad.as_deref_mut() {
            let fg = full_grad.as_ref().unwrap();
            g.fill(0.0);
            let (first, count) = self.free_frames();
            for j in 0..count {
                g.as_mut_slice()[j * nd..(j + 1) * nd]
                    .copy_from_slice(&fg.as_slice()[(first + j) * nd..(first + j + 1) * nd]);
            }
            if matches!(self.regime, Regime::Cyclic { .. }) {
                self.fold_grad_frame(&fg.as_slice()[self.k * nd..], &mut g.as_mut_slice()[..nd]);
            }
        }

        if let Some(sys) = hess {
            let fh = full_hess.as_ref().unwrap();
            let (first, count) = self.free_frames();
            for j in 0..count {
                *sys.diag_mut(j) += fh.diag_block(first + j);
            }
            for k in 0..self.k {
                let (na, nb) = (self.frame_node(k), self.frame_node(k + 1));
                if let (Some((na, ra)), Some((nb, rb))) = (na, nb) {
                    // Source block couples frame k+1 (rows) to frame k.
                    let mut m = fh.lower_block(k).clone();
                    if rb {
                        m = self.fold_rows(&m);
                    }
                    if ra {
                        m = self.fold_cols(&m);
                    }
                    if na == nb {
                        let sym = &m + m.transpose();
                        *sys.diag_mut(na) += &sym;
                    } else {
                        self.add_block(sys, nb, na, &m);
                    }
                }
            }
            if matches!(self.regime, Regime::Cyclic { .. }) {
                let folded = self.fold_rows(&self.fold_cols(fh.diag_block(self.k)));
                *sys.diag_mut(0) += &folded;
            }
        }
        Ok(value)
    }

    /// Residuals and optionally folded Jacobian segments of one constraint
    /// block. Each segment is `(node, rows x nd)`; nodes are unique.
    fn eval_block(
        &self,
        b: &ConsBlock,
        flat: &[f64],
        want_jac: bool,
    ) -> (DVector<f64>, Vec<(usize, DMatrix<f64>)>) {
        let nd = self.nd();
        let d = self.dim;
        let n = self.n;
        let mut res = DVector::zeros(b.rows);
        let mut segs: Vec<(usize, DMatrix<f64>)> = Vec::new();
        match b.kind {
            ConsKind::Momentum { interval } => {
                let win = &flat[interval * nd..(interval + 2) * nd];
                let mut jac = if want_jac {
                    Some(DMatrix::zeros(b.rows, 2 * nd))
                } else {
                    None
                };
                momentum_window(
                    d,
                    n,
                    win,
                    self.k as f64,
                    &self.params.outer,
                    res.as_mut_slice(),
                    jac.as_mut(),
                    None,
                );
                if let Some(jac) = jac {
                    for (side, frame) in [(0usize, interval), (1usize, interval + 1)] {
                        if let Some((node, fold)) = self.frame_node(frame) {
                            let mut seg = jac.view((0, side * nd), (b.rows, nd)).clone_owned();
                            if fold {
                                seg = self.fold_cols(&seg);
                            }
                            if let Some(pos) = segs.iter().position(|s| s.0 == node) {
                                segs[pos].1 += seg;
                            } else {
                                segs.push((node, seg));
                            }
                        }
                    }
                }
            }
            ConsKind::Iso { frame } => {
                let x = &flat[frame * nd..(frame + 1) * nd];
                let mut jac = if want_jac {
                    Some(DMatrix::zeros(b.rows, nd))
                } else {
                    None
                };
                edge_length_window(
                    d,
                    n,
                    x,
                    &self.config.iso_edges,
                    &self.config.iso_targets,
                    res.as_mut_slice(),
                    jac.as_mut(),
                    None,
                );
                if let Some(jac) = jac {
                    segs.push((b.node, jac));
                }
            }
            ConsKind::Anchor => {
                let x = &flat[..nd];
                let target = self.config.anchor.as_ref().unwrap();
                let mut jac = if want_jac {
                    Some(DMatrix::zeros(b.rows, nd))
                } else {
                    None
                };
                anchor_window(d, n, x, target, res.as_mut_slice(), jac.as_mut(), None);
                if let Some(jac) = jac {
                    segs.push((b.node, jac));
                }
            }
            ConsKind::Registration => {
                let targets = match &self.regime {
                    Regime::Displacement { targets, .. } => targets,
                    _ => unreachable!(),
                };
                let x = &flat[self.k * nd..];
                let mut jac = if want_jac {
                    Some(DMatrix::zeros(b.rows, nd))
                } else {
                    None
                };
                registration_window(d, n, x, targets, res.as_mut_slice(), jac.as_mut(), None);
                if let Some(jac) = jac {
                    segs.push((b.node, jac));
                }
            }
        }
        (res, segs)
    }

    /// Adds the multiplier-contracted constraint curvature to the folded
    /// Hessian.
    fn accumulate_cons_hess(
        &self,
        b: &ConsBlock,
        flat: &[f64],
        lam: &[f64],
        sys: &mut BlockSystem,
    ) {
        let nd = self.nd();
        let d = self.dim;
        let n = self.n;
        match b.kind {
            ConsKind::Momentum { interval } => {
                let win = &flat[interval * nd..(interval + 2) * nd];
                let mut res = DVector::zeros(b.rows);
                let mut hw = DMatrix::zeros(2 * nd, 2 * nd);
                momentum_window(
                    d,
                    n,
                    win,
                    self.k as f64,
                    &self.params.outer,
                    res.as_mut_slice(),
                    None,
                    Some((lam, &mut hw)),
                );
                let na = self.frame_node(interval);
                let nb = self.frame_node(interval + 1);
                let quad =
                    |sr: usize, sc: usize| hw.view((sr * nd, sc * nd), (nd, nd)).clone_owned();
                if let Some((na, ra)) = na {
                    debug_assert!(!ra, "the earlier interval frame never folds");
                    let m = quad(0, 0);
                    *sys.diag_mut(na) += &m;
                }
                if let Some((nb, rb)) = nb {
                    let mut m = quad(1, 1);
                    if rb {
                        m = self.fold_rows(&self.fold_cols(&m));
                    }
                    *sys.diag_mut(nb) += &m;
                }
                if let (Some((na, _)), Some((nb, rb))) = (na, nb) {
                    let mut m = quad(1, 0);
                    if rb {
                        m = self.fold_rows(&m);
                    }
                    if na == nb {
                        let sym = &m + m.transpose();
                        *sys.diag_mut(na) += &sym;
                    } else {
                        self.add_block(sys, nb, na, &m);
                    }
                }
            }
            ConsKind::Iso { frame } => {
                let x = &flat[frame * nd..(frame + 1) * nd];
                let mut res = DVector::zeros(b.rows);
                let mut h = DMatrix::zeros(nd, nd);
                edge_length_window(
                    d,
                    n,
                    x,
                    &self.config.iso_edges,
                    &self.config.iso_targets,
                    res.as_mut_slice(),
                    None,
                    Some((lam, &mut h)),
                );
                *sys.diag_mut(b.node) += &h;
            }
            ConsKind::Anchor => {
                let x = &flat[..nd];
                let target = self.config.anchor.as_ref().unwrap();
                let mut res = DVector::zeros(b.rows);
                let mut h = DMatrix::zeros(nd, nd);
                anchor_window(
                    d,
                    n,
                    x,
                    target,
                    res.as_mut_slice(),
                    None,
                    Some((lam, &mut h)),
                );
                *sys.diag_mut(b.node) += &h;
            }
            ConsKind::Registration => {
                let targets = match &self.regime {
                    Regime::Displacement { targets, .. } => targets,
                    _ => unreachable!(),
                };
                let x = &flat[self.k * nd..];
                let mut res = DVector::zeros(b.rows);
                let mut h = DMatrix::zeros(nd, nd);
                registration_window(d, n, x, targets, res.as_mut_slice(), None, Some((lam, &mut h)));
                *sys.diag_mut(b.node) += &h;
            }
        }
    }

    /// Stacked equality residuals.
    pub fn constraints(&self, flat: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.eq_rows);
        for b in &self.blocks {
            let (res, _) = self.eval_block(b, flat, false);
            out.rows_mut(b.offset, b.rows).copy_from(&res);
        }
        out
    }

    /// Slacks `l_i - l_min` on frame 0 (nonnegative when feasible), with
    /// optional Jacobian.
    fn ineq(&self, flat: &[f64], want_jac: bool) -> (DVector<f64>, Option<DMatrix<f64>>) {
        let rows = self.ineq_rows();
        let nd = self.nd();
        if rows == 0 {
            return (DVector::zeros(0), None);
        }
        let lmin = self.config.min_len.unwrap();
        let edges: Vec<usize> = (0..self.n - 1).collect();
        let targets = vec![lmin; rows];
        let mut res = DVector::zeros(rows);
        let mut jac = if want_jac {
            Some(DMatrix::zeros(rows, nd))
        } else {
            None
        };
        edge_length_window(
            self.dim,
            self.n,
            &flat[..nd],
            &edges,
            &targets,
            res.as_mut_slice(),
            jac.as_mut(),
            None,
        );
        (res, jac)
    }

    /// Augmented Lagrangian value with optional gradient and Hessian.
    fn al_eval(
        &self,
        z: &DVector<f64>,
        lam_eq: &DVector<f64>,
        lam_in: &DVector<f64>,
        mu: f64,
        mut grad: Option<&mut DVector<f64>>,
        mut hess: Option<&mut BlockSystem>,
    ) -> Result<f64, DissipationError> {
        let mut value = self.energy(z, grad.as_deref_mut(), hess.as_deref_mut())?;
        let flat = self.full_flat(z);
        let want_deriv = grad.is_some() || hess.is_some();
        let nd = self.nd();

        for b in &self.blocks {
            let (res, segs) = self.eval_block(b, &flat, want_deriv);
            let lam = lam_eq.rows(b.offset, b.rows).clone_owned();
            for r in 0..b.rows {
                value += lam[r] * res[r] + 0.5 * mu * res[r] * res[r];
            }
            if want_deriv {
                let eff = &lam + &res * mu;
                if let Some(g) = grad.as_deref_mut() {
                    for (node, seg) in &segs {
                        let contrib = seg.transpose() * &eff;
                        g.rows_mut(node * nd, nd).axpy(1.0, &contrib, 1.0);
                    }
                }
                if let Some(sys) = hess.as_deref_mut() {
                    self.accumulate_cons_hess(b, &flat, eff.as_slice(), sys);
                    // Gauss-Newton part mu J^T J of the penalty curvature.
                    for (ia, (na, ma)) in segs.iter().enumerate() {
                        let own = ma.transpose() * ma * mu;
                        *sys.diag_mut(*na) += &own;
                        for (nb, mb) in segs.iter().skip(ia + 1) {
                            let cross = mb.transpose() * ma * mu;
                            if nb == na {
                                let sym = &cross + cross.transpose();
                                *sys.diag_mut(*na) += &sym;
                            } else {
                                self.add_block(sys, *nb, *na, &cross);
                            }
                        }
                    }
                }
            }
        }

        if self.ineq_rows() > 0 {
            let (s, jac) = self.ineq(&flat, want_deriv);
            for r in 0..s.len() {
                let a = lam_in[r] - mu * s[r];
                if a > 0.0 {
                    value += (a * a - lam_in[r] * lam_in[r]) / (2.0 * mu);
                    if want_deriv {
                        let j = jac.as_ref().unwrap();
                        if let Some(g) = grad.as_deref_mut() {
                            for c in 0..nd {
                                g[c] -= a * j[(r, c)];
                            }
                        }
                        if let Some(sys) = hess.as_deref_mut() {
                            let row = DVector::from_fn(nd, |c, _| j[(r, c)]);
                            let outer = &row * row.transpose() * mu;
                            *sys.diag_mut(0) += &outer;
                            let lamrow = [-a];
                            let edges = [r];
                            let targets = [self.config.min_len.unwrap()];
                            let mut dump = [0.0];
                            let mut h = DMatrix::zeros(nd, nd);
                            edge_length_window(
                                self.dim,
                                self.n,
                                &flat[..nd],
                                &edges,
                                &targets,
                                &mut dump,
                                None,
                                Some((&lamrow, &mut h)),
                            );
                            *sys.diag_mut(0) += &h;
                        }
                    }
                } else {
                    value -= lam_in[r] * lam_in[r] / (2.0 * mu);
                }
            }
        }
        Ok(value)
    }

    fn al_grad_norm(
        &self,
        z: &DVector<f64>,
        lam_eq: &DVector<f64>,
        lam_in: &DVector<f64>,
        mu: f64,
    ) -> Result<f64, Failure> {
        let mut grad = DVector::zeros(z.len());
        self.al_eval(z, lam_eq, lam_in, mu, Some(&mut grad), None)
            .map_err(Failure::Eval)?;
        Ok(inf_norm(&grad))
    }

    /// Damped Newton minimization of the augmented Lagrangian to gradient
    /// tolerance `omega`. Returns the achieved gradient norm.
    fn minimize_al(
        &self,
        z: &mut DVector<f64>,
        lam_eq: &DVector<f64>,
        lam_in: &DVector<f64>,
        mu: f64,
        omega: f64,
        budget: &mut usize,
    ) -> Result<f64, Failure> {
        let mut delta = 0.0f64;
        let mut value = self
            .al_eval(z, lam_eq, lam_in, mu, None, None)
            .map_err(Failure::Eval)?;
        loop {
            if *budget == 0 {
                return self.al_grad_norm(z, lam_eq, lam_in, mu);
            }
            let mut grad = DVector::zeros(z.len());
            let mut hess = self.new_hess_nodes();
            self.al_eval(z, lam_eq, lam_in, mu, Some(&mut grad), Some(&mut hess))
                .map_err(Failure::Eval)?;
            let gnorm = inf_norm(&grad);
            if gnorm <= omega {
                return Ok(gnorm);
            }
            *budget -= 1;

            // Factor with escalating diagonal shifts until the step is a
            // descent direction.
            let mut step = None;
            for _ in 0..60 {
                let mut shifted = hess.clone();
                if delta > 0.0 {
                    shifted.shift_diagonal(delta);
                }
                match shifted.factorize() {
                    Ok(f) => {
                        if let Ok(dz) = f.solve(&(-&grad)) {
                            if grad.dot(&dz) < 0.0 && dz.iter().all(|v| v.is_finite()) {
                                step = Some(dz);
                                break;
                            }
                        }
                        delta = (delta * 10.0).max(1e-8);
                    }
                    Err(_) => {
                        delta = (delta * 10.0).max(1e-8);
                    }
                }
                if delta > 1e14 {
                    break;
                }
            }
            let dz = step.ok_or_else(|| {
                Failure::Stalled("no descent direction at any regularization".into())
            })?;
            let slope = grad.dot(&dz);

            // Backtracking line search; evaluation failures (degenerate
            // trial frames) shrink the step like an infinite value.
            let mut alpha = 1.0f64;
            let mut accepted = false;
            for _ in 0..40 {
                let cand = &*z + alpha * &dz;
                match self.al_eval(&cand, lam_eq, lam_in, mu, None, None) {
                    Ok(v) if v <= value + 1e-4 * alpha * slope => {
                        *z = cand;
                        value = v;
                        accepted = true;
                        break;
                    }
                    _ => alpha *= 0.5,
                }
            }
            if accepted {
                delta *= 0.25;
                if delta < 1e-12 {
                    delta = 0.0;
                }
            } else {
                delta = (delta * 100.0).max(1e-6);
                if delta > 1e14 {
                    return Err(Failure::Stalled(
                        "line search failed at maximal regularization".into(),
                    ));
                }
            }
        }
    }

    /// Worst equality residual or bound violation.
    fn feasibility(&self, flat: &[f64]) -> f64 {
        let c = self.constraints(flat);
        let mut worst = inf_norm(&c);
        if self.ineq_rows() > 0 {
            let (s, _) = self.ineq(flat, false);
            for r in 0..s.len() {
                worst = worst.max((-s[r]).max(0.0));
            }
        }
        worst
    }

    /// Stationarity residual of the Lagrangian at the given multipliers.
    fn dual_residual(
        &self,
        z: &DVector<f64>,
        lam_eq: &DVector<f64>,
        lam_in: &DVector<f64>,
    ) -> Result<DVector<f64>, Failure> {
        let nd = self.nd();
        let mut grad = DVector::zeros(z.len());
        self.energy(z, Some(&mut grad), None)
            .map_err(Failure::Eval)?;
        let flat = self.full_flat(z);
        for b in &self.blocks {
            let (_, segs) = self.eval_block(b, &flat, true);
            let lam = lam_eq.rows(b.offset, b.rows).clone_owned();
            for (node, seg) in &segs {
                let contrib = seg.transpose() * &lam;
                grad.rows_mut(node * nd, nd).axpy(1.0, &contrib, 1.0);
            }
        }
        if self.ineq_rows() > 0 && lam_in.iter().any(|&v| v != 0.0) {
            let (_, jac) = self.ineq(&flat, true);
            let j = jac.unwrap();
            for r in 0..self.ineq_rows() {
                if lam_in[r] != 0.0 {
                    for c in 0..nd {
                        grad[c] -= lam_in[r] * j[(r, c)];
                    }
                }
            }
        }
        Ok(grad)
    }

    /// Full solve: augmented Lagrangian outer loop, then a Newton polish on
    /// the stationarity system.
    pub fn solve(&self, z0: DVector<f64>, opts: &SolveOptions) -> Result<Solved, Failure> {
        assert_eq!(z0.len(), self.num_unknowns());
        if self.num_unknowns() == 0 {
            let flat = self.full_flat(&z0);
            let energy = eval_path(
                self.dim,
                self.n,
                &flat,
                self.k,
                &self.params,
                EvalRequest::value_only(),
            )
            .map_err(Failure::Eval)?;
            let feas = self.feasibility(&flat);
            return Ok(Solved {
                z: z0,
                energy,
                feasibility: feas,
                optimality: 0.0,
                iterations: 0,
                outer_iterations: 0,
                polish_iterations: 0,
                converged: feas <= opts.tol_constraint,
                multipliers: DVector::zeros(self.eq_rows),
            });
        }

        let mut z = z0;
        let mut lam_eq = DVector::zeros(self.eq_rows);
        let mut lam_in = DVector::zeros(self.ineq_rows());
        let mut mu = 10.0f64;
        let mut omega = 1.0 / mu;
        let mut eta = 1.0 / mu.powf(0.1);
        // Keep a slice of the budget for the polish phase so a slow
        // multiplier loop cannot starve it.
        let reserve = (opts.max_iterations / 10).clamp(1, 30);
        let mut budget = opts.max_iterations.saturating_sub(reserve);
        let mut outer = 0usize;
        let omega_floor = 0.1 * opts.tol_optimality;
        let mu_max = 1e10;

        loop {
            outer += 1;
            self.minimize_al(
                &mut z,
                &lam_eq,
                &lam_in,
                mu,
                omega.max(omega_floor),
                &mut budget,
            )?;
            let flat = self.full_flat(&z);
            let feas = self.feasibility(&flat);

            if feas <= eta {
                let c = self.constraints(&flat);
                lam_eq.axpy(mu, &c, 1.0);
                if self.ineq_rows() > 0 {
                    let (s, _) = self.ineq(&flat, false);
                    for r in 0..s.len() {
                        lam_in[r] = (lam_in[r] - mu * s[r]).max(0.0);
                    }
                }
                let dual = inf_norm(&self.dual_residual(&z, &lam_eq, &lam_in)?);
                if feas <= (10.0 * opts.tol_constraint).max(1e-7)
                    && dual <= (10.0 * opts.tol_optimality).max(1e-5)
                {
                    break; // hand off to the polish phase
                }
                eta = (eta / mu.powf(0.9)).max(0.1 * opts.tol_constraint);
                omega = (omega / mu).max(omega_floor);
            } else {
                mu = (mu * 10.0).min(mu_max);
                eta = 1.0 / mu.powf(0.1);
                omega = 1.0 / mu;
            }
            if budget == 0 || outer > 60 {
                break;
            }
        }

        budget += reserve;
        let polish_iters = self.polish(&mut z, &mut lam_eq, &mut lam_in, opts, &mut budget)?;

        let flat = self.full_flat(&z);
        let feas = self.feasibility(&flat);
        let dual = inf_norm(&self.dual_residual(&z, &lam_eq, &lam_in)?);
        let energy = self.energy(&z, None, None).map_err(Failure::Eval)?;
        let converged = feas <= opts.tol_constraint && dual <= opts.tol_optimality;
        Ok(Solved {
            z,
            energy,
            feasibility: feas,
            optimality: dual,
            iterations: opts.max_iterations - budget,
            outer_iterations: outer,
            polish_iterations: polish_iters,
            converged,
            multipliers: lam_eq,
        })
    }

    /// Primal-dual Newton iterations on the stationarity system with the
    /// entry active set of bounds frozen as equalities.
    fn polish(
        &self,
        z: &mut DVector<f64>,
        lam_eq: &mut DVector<f64>,
        lam_in: &mut DVector<f64>,
        opts: &SolveOptions,
        budget: &mut usize,
    ) -> Result<usize, Failure> {
        let nd = self.nd();
        let nodes = self.num_nodes();
        let flat0 = self.full_flat(z);
        let active: Vec<usize> = if self.ineq_rows() > 0 {
            let (s, _) = self.ineq(&flat0, false);
            (0..s.len())
                .filter(|&r| lam_in[r] > 0.0 || s[r] < opts.tol_constraint)
                .collect()
        } else {
            Vec::new()
        };
        let mut lam_act = DVector::zeros(active.len());
        for (j, &r) in active.iter().enumerate() {
            lam_act[j] = -lam_in[r];
        }

        // Supernode sizes: coordinates plus attached constraint rows;
        // active bounds attach to node 0.
        let mut rows_at = vec![0usize; nodes];
        for b in &self.blocks {
            rows_at[b.node] += b.rows;
        }
        rows_at[0] += active.len();
        let sizes: Vec<usize> = (0..nodes).map(|j| nd + rows_at[j]).collect();

        let mut inner_off = vec![nd; nodes];
        let mut block_slot = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            block_slot.push(inner_off[b.node]);
            inner_off[b.node] += b.rows;
        }
        let active_slot = inner_off[0];

        let cyclic = matches!(self.regime, Regime::Cyclic { .. }) && nodes >= 3;
        let zeros_in = DVector::zeros(self.ineq_rows());

        // Combined KKT residual, worst feasibility, and worst stationarity.
        let residual = |zc: &DVector<f64>,
                        lec: &DVector<f64>,
                        lac: &DVector<f64>|
         -> Result<(DVector<f64>, f64, f64), Failure> {
            let mut dual = self.dual_residual(zc, lec, &zeros_in)?;
            let flat = self.full_flat(zc);
            let prim = self.constraints(&flat);
            let (s, jac) = self.ineq(&flat, !active.is_empty());
            if !active.is_empty() {
                let j = jac.as_ref().unwrap();
                for (aj, &r) in active.iter().enumerate() {
                    for c in 0..nd {
                        dual[c] += lac[aj] * j[(r, c)];
                    }
                }
            }
            let mut full = DVector::zeros(zc.len() + self.eq_rows + active.len());
            full.rows_mut(0, zc.len()).copy_from(&dual);
            if self.eq_rows > 0 {
                full.rows_mut(zc.len(), self.eq_rows).copy_from(&prim);
            }
            for (aj, &r) in active.iter().enumerate() {
                full[zc.len() + self.eq_rows + aj] = s[r];
            }
            let mut feas = inf_norm(&prim);
            for &r in &active {
                feas = feas.max(s[r].abs());
            }
            for r in 0..s.len() {
                if !active.contains(&r) {
                    feas = feas.max((-s[r]).max(0.0));
                }
            }
            Ok((full, feas, inf_norm(&dual)))
        };

        let (mut rvec, mut feas, mut dualn) = residual(z, lam_eq, &lam_act)?;
        let mut rnorm = rvec.norm();
        let mut delta = 0.0f64;
        let mut iters = 0usize;
        while (feas > opts.tol_constraint || dualn > opts.tol_optimality)
            && *budget > 0
            && iters < 50
        {
            *budget -= 1;
            iters += 1;

            // Lagrangian curvature over the coordinates.
            let mut hz = self.new_hess_nodes();
            self.energy(z, None, Some(&mut hz)).map_err(Failure::Eval)?;
            let flat = self.full_flat(z);
            for b in &self.blocks {
                let lam = lam_eq.rows(b.offset, b.rows).clone_owned();
                self.accumulate_cons_hess(b, &flat, lam.as_slice(), &mut hz);
            }
            if !active.is_empty() {
                let edges: Vec<usize> = active.clone();
                let targets = vec![self.config.min_len.unwrap(); active.len()];
                let mut dump = vec![0.0; active.len()];
                let mut h = DMatrix::zeros(nd, nd);
                edge_length_window(
                    self.dim,
                    self.n,
                    &flat[..nd],
                    &edges,
                    &targets,
                    &mut dump,
                    None,
                    Some((lam_act.as_slice(), &mut h)),
                );
                *hz.diag_mut(0) += &h;
            }

            // Assemble the supernode stationarity Jacobian.
            let mut sys = BlockSystem::new(sizes.clone());
            for j in 0..nodes {
                sys.diag_mut(j)
                    .view_mut((0, 0), (nd, nd))
                    .copy_from(hz.diag_block(j));
                if j + 1 < nodes {
                    sys.lower_mut(j)
                        .view_mut((0, 0), (nd, nd))
                        .copy_from(hz.lower_block(j));
                }
            }
            if cyclic {
                sys.corner_mut()
                    .view_mut((0, 0), (nd, nd))
                    .copy_from(hz.corner_block().unwrap());
            }
            for (bi, b) in self.blocks.iter().enumerate() {
                let (_, segs) = self.eval_block(b, &flat, true);
                let slot = block_slot[bi];
                for (node_c, seg) in &segs {
                    if *node_c == b.node {
                        let dblk = sys.diag_mut(b.node);
                        dblk.view_mut((slot, 0), (b.rows, nd)).copy_from(seg);
                        dblk.view_mut((0, slot), (nd, b.rows))
                            .copy_from(&seg.transpose());
                    } else if *node_c + 1 == b.node {
                        sys.lower_mut(*node_c)
                            .view_mut((slot, 0), (b.rows, nd))
                            .copy_from(seg);
                    } else if b.node + 1 == *node_c {
                        sys.lower_mut(b.node)
                            .view_mut((0, slot), (nd, b.rows))
                            .copy_from(&seg.transpose());
                    } else if b.node == 0 && *node_c == nodes - 1 {
                        sys.corner_mut()
                            .view_mut((0, slot), (nd, b.rows))
                            .copy_from(&seg.transpose());
                    } else {
                        unreachable!("constraint block with non-adjacent segment");
                    }
                }
            }
            if !active.is_empty() {
                let (_, jac) = self.ineq(&flat, true);
                let j = jac.unwrap();
                for (aj, &r) in active.iter().enumerate() {
                    let slot = active_slot + aj;
                    let dblk = sys.diag_mut(0);
                    for c in 0..nd {
                        dblk[(slot, c)] = j[(r, c)];
                        dblk[(c, slot)] = j[(r, c)];
                    }
                }
            }
            // Quasi-definite regularization of the multiplier rows.
            for j in 0..nodes {
                let dblk = sys.diag_mut(j);
                for i in nd..sizes[j] {
                    dblk[(i, i)] -= 1e-10;
                }
            }

            // Right-hand side reordered into node layout.
            let mut rhs = DVector::zeros(sys.total_dim());
            for j in 0..nodes {
                let off = sys.offset(j);
                rhs.rows_mut(off, nd).copy_from(&rvec.rows(j * nd, nd));
            }
            for (bi, b) in self.blocks.iter().enumerate() {
                let off = sys.offset(b.node) + block_slot[bi];
                rhs.rows_mut(off, b.rows)
                    .copy_from(&rvec.rows(z.len() + b.offset, b.rows));
            }
            for aj in 0..active.len() {
                rhs[sys.offset(0) + active_slot + aj] = rvec[z.len() + self.eq_rows + aj];
            }
            rhs.neg_mut();

            // Solve, shifting the coordinate diagonal on failure.
            let step = loop {
                let mut shifted = sys.clone();
                if delta > 0.0 {
                    for j in 0..nodes {
                        let dblk = shifted.diag_mut(j);
                        for i in 0..nd {
                            dblk[(i, i)] += delta;
                        }
                    }
                }
                let attempt = shifted.factorize().and_then(|f| f.solve(&rhs));
                match attempt {
                    Ok(s) if s.iter().all(|v| v.is_finite()) => break Some(s),
                    _ => {
                        delta = (delta * 10.0).max(1e-10);
                        if delta > 1e6 {
                            break None;
                        }
                    }
                }
            };
            let Some(step) = step else {
                break;
            };

            let mut dz = DVector::zeros(z.len());
            let mut dl_eq = DVector::zeros(self.eq_rows);
            let mut dl_act = DVector::zeros(active.len());
            for j in 0..nodes {
                let off = sys.offset(j);
                dz.rows_mut(j * nd, nd).copy_from(&step.rows(off, nd));
            }
            for (bi, b) in self.blocks.iter().enumerate() {
                let off = sys.offset(b.node) + block_slot[bi];
                dl_eq
                    .rows_mut(b.offset, b.rows)
                    .copy_from(&step.rows(off, b.rows));
            }
            for aj in 0..active.len() {
                dl_act[aj] = step[sys.offset(0) + active_slot + aj];
            }

            let mut alpha = 1.0f64;
            let mut improved = false;
            for _ in 0..30 {
                let zc = &*z + alpha * &dz;
                let lc = &*lam_eq + alpha * &dl_eq;
                let ac = &lam_act + alpha * &dl_act;
                if let Ok((rv, fe, du)) = residual(&zc, &lc, &ac) {
                    let rn = rv.norm();
                    if rn <= (1.0 - 1e-4 * alpha) * rnorm {
                        *z = zc;
                        *lam_eq = lc;
                        lam_act = ac;
                        rvec = rv;
                        rnorm = rn;
                        feas = fe;
                        dualn = du;
                        improved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if improved {
                delta *= 0.1;
                if delta < 1e-14 {
                    delta = 0.0;
                }
            } else {
                delta = (delta * 100.0).max(1e-8);
                if delta > 1e6 {
                    break;
                }
            }
        }

        for (aj, &r) in active.iter().enumerate() {
            lam_in[r] = (-lam_act[aj]).max(0.0);
        }
        Ok(iters)
    }
}
