//! Boundary control of the filtered wave system by duality.
//!
//! The controlled problem is the explicit leapfrog discretization of the
//! wave equation with Dirichlet boundary actuation: given initial data
//! (theta0, theta1), find boundary values g on [0, T] driving the
//! projection of the final state onto the modes with lambda <= N to zero.
//!
//! The construction uses the exact discrete duality of the scheme. For a
//! homogeneous dual trajectory phi^n with zero boundary values, the
//! quantity A_n = phi^n' M u^{n+1} - phi^{n+1}' M u^n satisfies
//!
//!   A_{N-1} - A_0 = -dt^2 sum_{n=1}^{N-1} (K phi^n)_boundary . g^n,
//!
//! so constraints on the final state become linear equations on g. Dual
//! trajectories built from Dirichlet eigenvectors have the closed form
//! phi^n = trig(n theta) psi with cos(theta) = 1 - dt^2 lambda / 2, which
//! makes the Gramian of the constraint map computable without any time
//! stepping. The control is sought in the span of the constraint
//! functionals (the minimal-norm ansatz), which yields a dense symmetric
//! positive definite system of size 2K for K retained modes.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::fem::{assemble_stiffness, Face, Grid, TensorField};
use crate::spectral::{mass_dot, EigenBasis, FilteredData};
use crate::wave::{integrate, WaveState};
use crate::{Error, Result};

/// A boundary control problem: drive the low modes of the final state to
/// zero at time `t_end` using Dirichlet boundary data.
pub struct ControlProblem {
    pub grid: Grid,
    pub a: TensorField,
    pub basis: EigenBasis,
    /// spectral cutoff: modes with lambda <= threshold are controlled
    pub threshold: f64,
    /// number of retained modes
    pub keep: usize,
    pub t_end: f64,
    /// actual step (the requested step shrunk to divide t_end)
    pub dt: f64,
    pub nsteps: usize,
    /// initial displacement (nodal, vanishing on the boundary)
    pub theta0: Vec<f64>,
    /// initial velocity (nodal realization)
    pub theta1: Vec<f64>,
    /// set when the caller's frequency threshold exceeds the requested
    /// filtering regime; informational only
    pub regime_flag: bool,
}

/// How to solve the dense normal equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    Dense,
    Cg,
}

/// The computed boundary control and its diagnostics.
pub struct ControlResult {
    pub threshold: f64,
    /// boundary values per time level 0..=nsteps, per boundary node;
    /// the first and last levels are identically zero by convention
    pub g: Vec<Vec<f64>>,
    pub boundary_nodes: Vec<usize>,
    pub dt: f64,
    /// minimizer coefficients: cosine and sine weights per retained mode
    pub minimizer_cos: Vec<f64>,
    pub minimizer_sin: Vec<f64>,
    /// condition number of the constraint Gramian
    pub condition: f64,
    /// relative algebraic residual of the normal equations
    pub normal_residual: f64,
    /// relative L2 norm of the retained modes of v(T) from the
    /// verification solve
    pub residual_l2: f64,
    /// relative dual-norm (coefficients weighted by 1/sqrt(lambda)) of the
    /// retained modes of dt v(T) from the verification solve
    pub residual_h1neg: f64,
    /// L2 norm of g over the lateral boundary cylinder
    pub control_norm: f64,
    /// norm of the controlled part of the data:
    /// ||P_N theta0||_L2 + ||P_N theta1||_{H^-1}
    pub data_norm: f64,
}

impl ControlProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: &Grid,
        a: &TensorField,
        basis: EigenBasis,
        threshold: f64,
        t_end: f64,
        dt: f64,
        theta0: Vec<f64>,
        theta1: Vec<f64>,
        regime_flag: bool,
    ) -> Result<ControlProblem> {
        let n = grid.num_nodes();
        if theta0.len() != n || theta1.len() != n {
            return Err(Error::invalid("initial data does not match the grid"));
        }
        if t_end <= 0.0 || dt <= 0.0 {
            return Err(Error::invalid("T and dt must be positive"));
        }
        if threshold > *basis.lambdas.last().unwrap() {
            return Err(Error::invalid(format!(
                "threshold {threshold} exceeds the largest computed eigenvalue; \
                 recompute the basis with more modes"
            )));
        }
        let keep = basis.dim_below(threshold);
        if keep == 0 {
            return Err(Error::invalid(format!(
                "no eigenvalue lies below the threshold {threshold}"
            )));
        }
        let steps = (t_end / dt - 1e-9).ceil().max(1.0);
        let dt = t_end / steps;
        let nsteps = steps as usize;
        if nsteps < 4 {
            return Err(Error::invalid("need at least 4 time steps for a control"));
        }
        // strict stability on the retained modes: theta must stay inside
        // (0, pi) for the trigonometric dual trajectories to be valid
        let lam_max = basis.lambdas[keep - 1];
        if dt * dt * lam_max >= 4.0 {
            return Err(Error::invalid(format!(
                "dt = {dt:.3e} is unstable for the retained mode lambda = {lam_max:.3e}"
            )));
        }
        let mut theta0 = theta0;
        for &idx in &grid.boundary_nodes() {
            theta0[idx] = 0.0;
        }
        Ok(ControlProblem {
            grid: grid.clone(),
            a: a.clone(),
            basis,
            threshold,
            keep,
            t_end,
            dt,
            nsteps,
            theta0,
            theta1,
            regime_flag,
        })
    }

    /// ||P_N theta0||_L2 + ||P_N theta1||_{H^-1} over the retained modes.
    pub fn data_norm(&self) -> f64 {
        let w = self.grid.node_weights();
        let mut s0 = 0.0;
        let mut s1 = 0.0;
        for k in 0..self.keep {
            let a = mass_dot(&self.grid, &self.theta0, &self.basis.psi[k], &w);
            let b = mass_dot(&self.grid, &self.theta1, &self.basis.psi[k], &w);
            s0 += a * a;
            s1 += b * b / self.basis.lambdas[k];
        }
        s0.sqrt() + s1.sqrt()
    }
}

/// Precomputed dual-mode data shared by the Gramian assembly and the
/// control synthesis.
struct DualSystem {
    keep: usize,
    nsteps: usize,
    dt: f64,
    /// per retained mode: acos(1 - dt^2 lambda / 2)
    thetas: Vec<f64>,
    /// effective discrete frequencies theta / dt
    omegas: Vec<f64>,
    /// per retained mode: boundary values of K psi
    flux: Vec<Vec<f64>>,
    bnodes: Vec<usize>,
    bweights: Vec<f64>,
    /// dense 2K x 2K Gramian; index 2k = cosine, 2k + 1 = sine component
    gram: DMatrix<f64>,
}

fn build_dual_system(p: &ControlProblem) -> DualSystem {
    let k_mat = assemble_stiffness(&p.grid, &p.a);
    let bnodes = p.grid.boundary_nodes();
    let faces = Face::all(p.grid.d);
    let bw_pairs = p.grid.boundary_weights(&faces);
    let bw_of: std::collections::HashMap<usize, f64> = bw_pairs.iter().copied().collect();
    let bweights: Vec<f64> = bnodes.iter().map(|i| *bw_of.get(i).unwrap_or(&0.0)).collect();

    let keep = p.keep;
    let dt = p.dt;
    let thetas: Vec<f64> =
        (0..keep).map(|x| (1.0 - 0.5 * dt * dt * p.basis.lambdas[x]).acos()).collect();
    let omegas: Vec<f64> = thetas.iter().map(|t| t / dt).collect();
    let flux: Vec<Vec<f64>> = (0..keep)
        .into_par_iter()
        .map(|x| {
            let full = k_mat.apply(&p.basis.psi[x]);
            bnodes.iter().map(|&i| full[i]).collect()
        })
        .collect();

    // spatial factor: weighted boundary correlation of the mode fluxes
    let mut b = DMatrix::<f64>::zeros(keep, keep);
    for x in 0..keep {
        for y in 0..=x {
            let mut s = 0.0;
            for (bi, &w) in bweights.iter().enumerate() {
                if w > 0.0 {
                    s += flux[x][bi] * flux[y][bi] / w;
                }
            }
            b[(x, y)] = s;
            b[(y, x)] = s;
        }
    }
    // temporal factor: discrete trig correlations over interior levels
    let n = p.nsteps;
    let dim = 2 * keep;
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let rows: Vec<Vec<f64>> = (0..dim)
        .into_par_iter()
        .map(|r| {
            let (x, xi) = (r / 2, r % 2);
            let mut row = vec![0.0; dim];
            for c in 0..=r {
                let (y, yi) = (c / 2, c % 2);
                let mut s = 0.0;
                for step in 1..n {
                    let ax = step as f64 * thetas[x];
                    let ay = step as f64 * thetas[y];
                    let tx = if xi == 0 { ax.cos() } else { ax.sin() };
                    let ty = if yi == 0 { ay.cos() } else { ay.sin() };
                    s += tx * ty;
                }
                row[c] = dt * s * b[(x, y)];
            }
            row
        })
        .collect();
    for r in 0..dim {
        for c in 0..=r {
            gram[(r, c)] = rows[r][c];
            gram[(c, r)] = rows[r][c];
        }
    }
    DualSystem { keep, nsteps: n, dt, thetas, omegas, flux, bnodes, bweights, gram }
}

impl DualSystem {
    /// Linear forms enforced on the trajectory: for each retained mode the
    /// cosine and sine pairings with the first two time levels.
    fn rhs(&self, p: &ControlProblem) -> DVector<f64> {
        let w = p.grid.node_weights();
        let k_mat = assemble_stiffness(&p.grid, &p.a);
        let ku0 = k_mat.apply(&p.theta0);
        let interior = p.grid.interior_nodes();
        let mut u1 = vec![0.0; p.grid.num_nodes()];
        for &i in &interior {
            u1[i] = p.theta0[i] + self.dt * p.theta1[i] - 0.5 * self.dt * self.dt * ku0[i] / w[i];
        }
        let mut ell = DVector::zeros(2 * self.keep);
        for x in 0..self.keep {
            let m0 = mass_dot(&p.grid, &p.theta0, &p.basis.psi[x], &w);
            let m1 = mass_dot(&p.grid, &u1, &p.basis.psi[x], &w);
            ell[2 * x] = m1 - self.thetas[x].cos() * m0;
            ell[2 * x + 1] = -self.thetas[x].sin() * m0;
        }
        ell
    }

    /// Boundary time series realized by a coefficient vector.
    fn synthesize_g(&self, c: &DVector<f64>) -> Vec<Vec<f64>> {
        let nb = self.bnodes.len();
        let mut g = vec![vec![0.0; nb]; self.nsteps + 1];
        for (step, row) in g.iter_mut().enumerate().take(self.nsteps).skip(1) {
            for x in 0..self.keep {
                let arg = step as f64 * self.thetas[x];
                let amp = c[2 * x] * arg.cos() + c[2 * x + 1] * arg.sin();
                if amp == 0.0 {
                    continue;
                }
                for (bi, val) in row.iter_mut().enumerate() {
                    if self.bweights[bi] > 0.0 {
                        *val += amp * self.flux[x][bi] / (self.bweights[bi] * self.dt);
                    }
                }
            }
        }
        g
    }

    /// L2 norm of a boundary series over the lateral cylinder.
    fn g_norm(&self, g: &[Vec<f64>]) -> f64 {
        let mut s = 0.0;
        for row in g {
            for (bi, &w) in self.bweights.iter().enumerate() {
                s += w * row[bi] * row[bi];
            }
        }
        (s * self.dt).sqrt()
    }
}

/// Coordinates of filtered data in the trigonometric dual basis: the
/// cosine weight is the displacement coefficient, the sine weight the
/// velocity coefficient divided by the discrete frequency.
fn trig_coords(fd: &FilteredData, sys: &DualSystem) -> Result<DVector<f64>> {
    if fd.a.len() < sys.keep || fd.b.len() < sys.keep {
        return Err(Error::invalid("coefficient vector shorter than the retained basis"));
    }
    let mut v = DVector::zeros(2 * sys.keep);
    for x in 0..sys.keep {
        v[2 * x] = fd.a[x];
        v[2 * x + 1] = fd.b[x] / sys.omegas[x];
    }
    Ok(v)
}

fn from_trig(v: &DVector<f64>, threshold: f64, sys: &DualSystem) -> FilteredData {
    let a = (0..sys.keep).map(|x| v[2 * x]).collect();
    let b = (0..sys.keep).map(|x| v[2 * x + 1] * sys.omegas[x]).collect();
    FilteredData { threshold, a, b }
}

/// The duality pairing in which the control Gramian is symmetric: the
/// Euclidean product of trigonometric coordinates.
pub fn dual_pairing(x: &FilteredData, y: &FilteredData, problem: &ControlProblem) -> Result<f64> {
    let sys = build_dual_system(problem);
    let xv = trig_coords(x, &sys)?;
    let yv = trig_coords(y, &sys)?;
    Ok(xv.dot(&yv))
}

/// Apply the control Gramian to filtered dual data: the image of
/// (phi0, phi1) under "run the dual trajectory, read its boundary flux,
/// feed that flux back as a control, and project the response".
pub fn gramian_apply(coeffs: &FilteredData, problem: &ControlProblem) -> Result<FilteredData> {
    let sys = build_dual_system(problem);
    let x = trig_coords(coeffs, &sys)?;
    let y = &sys.gram * x;
    Ok(from_trig(&y, coeffs.threshold, &sys))
}

/// Solve for the minimal-norm boundary control of the retained modes.
pub fn solve_control(
    problem: &ControlProblem,
    method: SolveMethod,
    tol: f64,
) -> Result<ControlResult> {
    if method == SolveMethod::Dense && problem.keep > 64 {
        return Err(Error::invalid(format!(
            "dense mode supports at most 64 retained modes, got {}",
            problem.keep
        )));
    }
    let sys = build_dual_system(problem);
    let ell = sys.rhs(problem);
    let dim = 2 * sys.keep;

    // condition number from the symmetric spectrum of the Gramian
    let eig = sys.gram.clone().symmetric_eigen();
    let emax = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let emin = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if emin <= 0.0 || emax / emin > 1e12 {
        return Err(Error::Singular(format!(
            "control Gramian is numerically singular (condition {:.3e}); \
             increase T or lower the frequency threshold",
            if emin > 0.0 { emax / emin } else { f64::INFINITY }
        )));
    }
    let condition = emax / emin;

    let c = match method {
        SolveMethod::Dense => sys
            .gram
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular("Cholesky factorization failed".into()))?
            .solve(&ell),
        SolveMethod::Cg => {
            let apply = |x: &[f64], y: &mut [f64]| {
                for r in 0..dim {
                    y[r] = (0..dim).map(|cc| sys.gram[(r, cc)] * x[cc]).sum();
                }
            };
            let diag: Vec<f64> = (0..dim).map(|i| sys.gram[(i, i)]).collect();
            let rhs: Vec<f64> = ell.iter().copied().collect();
            let mut x = vec![0.0; dim];
            crate::fem::cg(&apply, &rhs, &mut x, &diag, tol, 100 * dim + 1000, None)?;
            DVector::from_vec(x)
        }
    };
    let resid = (&sys.gram * &c - &ell).norm();
    let scale = ell.norm().max(1e-300);
    let g = sys.synthesize_g(&c);
    let control_norm = sys.g_norm(&g);

    let mut result = ControlResult {
        threshold: problem.threshold,
        g,
        boundary_nodes: sys.bnodes.clone(),
        dt: sys.dt,
        minimizer_cos: (0..sys.keep).map(|x| c[2 * x]).collect(),
        minimizer_sin: (0..sys.keep).map(|x| c[2 * x + 1]).collect(),
        condition,
        normal_residual: resid / scale,
        residual_l2: 0.0,
        residual_h1neg: 0.0,
        control_norm,
        data_norm: problem.data_norm(),
    };
    let (r0, r1) = verify_control(&result, problem)?;
    result.residual_l2 = r0;
    result.residual_h1neg = r1;
    Ok(result)
}

/// Sample a stored boundary series at an arbitrary time by linear
/// interpolation; zero outside [0, T].
fn boundary_interp(result: &ControlResult, t: f64, node: usize, index_of: &[usize]) -> f64 {
    let bi = index_of[node];
    if bi == usize::MAX {
        return 0.0;
    }
    let x = t / result.dt;
    let n = result.g.len() - 1;
    if x <= 0.0 || x >= n as f64 {
        return 0.0;
    }
    let n0 = x.floor() as usize;
    let frac = x - n0 as f64;
    let lo = result.g[n0][bi];
    if frac < 1e-9 {
        return lo;
    }
    let hi = result.g[(n0 + 1).min(n)][bi];
    lo + frac * (hi - lo)
}

fn node_index_map(grid: &Grid, bnodes: &[usize]) -> Vec<usize> {
    let mut map = vec![usize::MAX; grid.num_nodes()];
    for (bi, &idx) in bnodes.iter().enumerate() {
        map[idx] = bi;
    }
    map
}

/// Independent verification: re-integrate the controlled problem at half
/// the construction step with the stored boundary series interpolated in
/// time, and report the relative size of the retained modes of the final
/// state: (L2 of displacement, dual norm of velocity), both divided by
/// the controlled data norm.
pub fn verify_control(result: &ControlResult, problem: &ControlProblem) -> Result<(f64, f64)> {
    let index_of = node_index_map(&problem.grid, &result.boundary_nodes);
    let g = |t: f64, node: usize| boundary_interp(result, t, node, &index_of);
    let initial = WaveState { t: 0.0, u: problem.theta0.clone(), v: problem.theta1.clone() };
    let traj = integrate(
        &problem.grid,
        &problem.a,
        &initial,
        Some(&g),
        None,
        problem.t_end,
        0.5 * result.dt,
        usize::MAX,
    )?;
    let last = traj.samples.last().unwrap();
    let w = problem.grid.node_weights();
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    for k in 0..problem.keep {
        let pu = mass_dot(&problem.grid, &last.u, &problem.basis.psi[k], &w);
        let pv = mass_dot(&problem.grid, &last.v, &problem.basis.psi[k], &w);
        s0 += pu * pu;
        s1 += pv * pv / problem.basis.lambdas[k];
    }
    let scale = problem.data_norm();
    if scale == 0.0 {
        return Ok((s0.sqrt(), s1.sqrt()));
    }
    Ok((s0.sqrt() / scale, s1.sqrt() / scale))
}

/// Evaluate the duality identity on a random retained dual datum: pair the
/// final state of the controlled trajectory (integrated at the
/// construction step) against random mode coefficients. The defect is at
/// rounding level for a valid control and O(1) for an arbitrary g.
pub fn duality_check(result: &ControlResult, problem: &ControlProblem) -> Result<f64> {
    let index_of = node_index_map(&problem.grid, &result.boundary_nodes);
    let g = |t: f64, node: usize| boundary_interp(result, t, node, &index_of);
    let initial = WaveState { t: 0.0, u: problem.theta0.clone(), v: problem.theta1.clone() };
    let traj = integrate(
        &problem.grid,
        &problem.a,
        &initial,
        Some(&g),
        None,
        problem.t_end,
        result.dt,
        usize::MAX,
    )?;
    let last = traj.samples.last().unwrap();
    let w = problem.grid.node_weights();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0ddd);
    let mut p = vec![0.0; problem.keep];
    let mut q = vec![0.0; problem.keep];
    for x in 0..problem.keep {
        p[x] = rng.random_range(-1.0..1.0);
        q[x] = rng.random_range(-1.0..1.0);
    }
    let norm = (p.iter().chain(&q).map(|v| v * v).sum::<f64>()).sqrt().max(1e-300);
    let mut defect = 0.0;
    for x in 0..problem.keep {
        let pu = mass_dot(&problem.grid, &last.u, &problem.basis.psi[x], &w);
        let pv = mass_dot(&problem.grid, &last.v, &problem.basis.psi[x], &w);
        defect += p[x] * pv - q[x] * pu;
    }
    let scale = problem.data_norm();
    Ok(defect.abs() / norm / if scale > 0.0 { scale } else { 1.0 })
}
