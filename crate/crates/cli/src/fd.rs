//! Finite-difference verification of the analytic derivatives on seeded
//! random instances: energy gradient, Hessian-vector products, and momentum
//! constraint Jacobians.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use subrig_core::constraints::{horizontality_jacobian, horizontality_residual};
use subrig_core::dissipation::{
    energy_gradient, energy_hessian, total_energy, DissipationParams, InnerParams, OuterParams,
};
use subrig_core::geometry::{MotionPath, Polyline};

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub instance: usize,
    pub dim: usize,
    pub vertices: usize,
    pub intervals: usize,
    pub grad_err: f64,
    pub hess_err: f64,
    pub jac_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub seed: u64,
    pub tol_grad: f64,
    pub tol_hess: f64,
    pub tol_jac: f64,
    pub max_grad_err: f64,
    pub max_hess_err: f64,
    pub max_jac_err: f64,
    pub pass: bool,
    pub instances: Vec<CheckOutcome>,
}

/// Runs `count` seeded random instances. `tol` bounds the gradient and
/// Jacobian errors; Hessian-vector products get ten times that (one more
/// level of differencing). Tolerances below the finite-difference noise
/// floor (around 1e-9 relative) cannot pass and the report says so.
pub fn run_check(seed: u64, count: usize, tol: f64) -> CheckReport {
    let tol_hess = 10.0 * tol;
    let mut instances = Vec::with_capacity(count);
    let (mut mg, mut mh, mut mj) = (0.0f64, 0.0f64, 0.0f64);
    for idx in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(idx as u64));
        let dim = if idx % 2 == 0 { 2 } else { 3 };
        let n = 5 + (idx % 4);
        let k = 3 + (idx % 3);
        let path = random_path(&mut rng, dim, n, k);
        let params = random_params(&mut rng, n - 1);

        let grad_err = grad_rel_err(&path, &params);
        let hess_err = hess_rel_err(&mut rng, &path, &params);
        let jac_err = jac_rel_err(&path, &params.outer);
        mg = mg.max(grad_err);
        mh = mh.max(hess_err);
        mj = mj.max(jac_err);
        instances.push(CheckOutcome {
            instance: idx,
            dim,
            vertices: n,
            intervals: k,
            grad_err,
            hess_err,
            jac_err,
        });
    }
    CheckReport {
        seed,
        tol_grad: tol,
        tol_hess,
        tol_jac: tol,
        max_grad_err: mg,
        max_hess_err: mh,
        max_jac_err: mj,
        pass: mg <= tol && mh <= tol_hess && mj <= tol,
        instances,
    }
}

fn random_path(rng: &mut ChaCha8Rng, dim: usize, n: usize, k: usize) -> MotionPath {
    let f1 = rng.gen_range(0.7..1.3);
    let f2 = rng.gen_range(0.5..1.1);
    let mut frames = Vec::with_capacity(k + 1);
    for frame in 0..=k {
        let t = frame as f64 / k as f64;
        let mut coords = Vec::with_capacity(n * dim);
        for i in 0..n {
            let s = i as f64 * 0.8;
            coords.push(s + 0.3 * t + 0.05 * rng.gen_range(-1.0..1.0));
            coords.push(0.4 * (f1 * s + 2.0 * t).sin() + 0.05 * rng.gen_range(-1.0..1.0));
            if dim == 3 {
                coords.push(0.3 * (f2 * s - t).cos() + 0.05 * rng.gen_range(-1.0..1.0));
            }
        }
        frames.push(Polyline::new(dim, coords).expect("jittered wave stays regular"));
    }
    MotionPath::new(frames).expect("jittered wave stays regular")
}

fn random_params(rng: &mut ChaCha8Rng, num_edges: usize) -> DissipationParams {
    let eps = (0..num_edges).map(|_| rng.gen_range(0.15..1.0)).collect();
    let weights = (0..num_edges).map(|_| rng.gen_range(0.5..2.0)).collect();
    DissipationParams {
        outer: OuterParams::new(eps, weights).expect("ranges are valid"),
        inner: InnerParams::new(rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0))
            .expect("ranges are valid"),
    }
}

fn rebuilt(path: &MotionPath, flat: &[f64]) -> MotionPath {
    MotionPath::from_flat_unchecked(path.dim(), path.num_vertices(), flat)
}

fn rel_inf(analytic: &[f64], fd: &[f64]) -> f64 {
    let scale = analytic.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(fd)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}

fn grad_rel_err(path: &MotionPath, params: &DissipationParams) -> f64 {
    let grad = energy_gradient(path, params).expect("instance is valid");
    let mut flat = path.to_flat().as_slice().to_vec();
    let mut fd = vec![0.0; flat.len()];
    for j in 0..flat.len() {
        let h = 3e-6 * (1.0 + flat[j].abs());
        let keep = flat[j];
        flat[j] = keep + h;
        let ep = total_energy(&rebuilt(path, &flat), params).expect("instance is valid");
        flat[j] = keep - h;
        let em = total_energy(&rebuilt(path, &flat), params).expect("instance is valid");
        flat[j] = keep;
        fd[j] = (ep - em) / (2.0 * h);
    }
    rel_inf(grad.as_slice(), &fd)
}

fn hess_rel_err(rng: &mut ChaCha8Rng, path: &MotionPath, params: &DissipationParams) -> f64 {
    let hess = energy_hessian(path, params).expect("instance is valid");
    let flat = path.to_flat().as_slice().to_vec();
    let dir: Vec<f64> = (0..flat.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let analytic = hess.mul_vec(&DVector::from_column_slice(&dir));
    let h = 3e-6;
    let plus: Vec<f64> = flat.iter().zip(&dir).map(|(x, v)| x + h * v).collect();
    let minus: Vec<f64> = flat.iter().zip(&dir).map(|(x, v)| x - h * v).collect();
    let gp = energy_gradient(&rebuilt(path, &plus), params).expect("instance is valid");
    let gm = energy_gradient(&rebuilt(path, &minus), params).expect("instance is valid");
    let fd: Vec<f64> = gp
        .as_slice()
        .iter()
        .zip(gm.as_slice())
        .map(|(p, m)| (p - m) / (2.0 * h))
        .collect();
    rel_inf(analytic.as_slice(), &fd)
}

fn jac_rel_err(path: &MotionPath, outer: &OuterParams) -> f64 {
    let jac = horizontality_jacobian(path, outer).expect("instance is valid");
    let mut flat = path.to_flat().as_slice().to_vec();
    let rows = jac.nrows();
    let mut fd = vec![0.0; rows * flat.len()];
    for j in 0..flat.len() {
        let h = 3e-6 * (1.0 + flat[j].abs());
        let keep = flat[j];
        flat[j] = keep + h;
        let rp = horizontality_residual(&rebuilt(path, &flat), outer).expect("instance is valid");
        flat[j] = keep - h;
        let rm = horizontality_residual(&rebuilt(path, &flat), outer).expect("instance is valid");
        flat[j] = keep;
        for r in 0..rows {
            fd[r * flat.len() + j] = (rp[r] - rm[r]) / (2.0 * h);
        }
    }
    let mut analytic = vec![0.0; rows * flat.len()];
    for r in 0..rows {
        for j in 0..flat.len() {
            analytic[r * flat.len() + j] = jac[(r, j)];
        }
    }
    rel_inf(&analytic, &fd)
}
