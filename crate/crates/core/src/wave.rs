//! Explicit second-order time integration of the wave equation with
//! Dirichlet data, per-step energies and boundary traces, and the modal
//! closed-form solution used as the oracle on filtered data.

use crate::fem::{assemble_stiffness, boundary_grad_sq, Csr, Face, Grid, TensorField};
use crate::spectral::{EigenBasis, FilteredData};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct WaveState {
    pub t: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl WaveState {
    pub fn zero(grid: &Grid) -> WaveState {
        WaveState { t: 0.0, u: vec![0.0; grid.num_nodes()], v: vec![0.0; grid.num_nodes()] }
    }
}

pub struct WaveTrajectory {
    pub grid: Grid,
    pub dt: f64,
    /// all step times 0, dt, ..., T
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    /// per-step boundary integral of |grad u|^2
    pub boundary_grad_sq: Vec<f64>,
    /// boundary node indices, fixed ordering
    pub boundary_nodes: Vec<usize>,
    /// per-boundary-node surface weights matching boundary_nodes
    pub boundary_weights: Vec<f64>,
    /// conormal derivative n . a grad u per step per boundary node,
    /// realized as the discrete flux (K u)_beta / w_beta
    pub conormal: Vec<Vec<f64>>,
    /// interior states every `sample_stride` steps (always includes the
    /// first and last step)
    pub samples: Vec<WaveState>,
    pub sample_stride: usize,
}

/// Largest stable step for the explicit scheme: cfl * h * sqrt(mu).
pub fn stable_dt(grid: &Grid, mu: f64, cfl: f64) -> f64 {
    let h = if grid.d == 1 { grid.h[0] } else { grid.h[0].min(grid.h[1]) };
    cfl * h * mu.sqrt()
}

/// Energy of a state: half the stiffness form plus half the lumped
/// kinetic term.
pub fn energy(grid: &Grid, a: &TensorField, state: &WaveState) -> f64 {
    let k = assemble_stiffness(grid, a);
    energy_with(grid, &k, state)
}

pub(crate) fn energy_with(grid: &Grid, k: &Csr, state: &WaveState) -> f64 {
    let w = grid.node_weights();
    let kin: f64 = state.v.iter().zip(&w).map(|(v, w)| v * v * w).sum();
    0.5 * (k.quad_form(&state.u).max(0.0) + kin)
}

/// Time-dependent boundary data: value at (t, node index).
pub type BoundaryData<'a> = Option<&'a dyn Fn(f64, usize) -> f64>;
/// Nodal forcing density at (t, node index).
pub type Forcing<'a> = Option<&'a dyn Fn(f64, usize) -> f64>;

/// Integrate with central (leapfrog) stepping to time T. The step is
/// shrunk so an integer number of steps lands exactly on T.
pub fn integrate(
    grid: &Grid,
    a: &TensorField,
    initial: &WaveState,
    g: BoundaryData,
    f: Forcing,
    t_end: f64,
    dt: f64,
    sample_stride: usize,
) -> Result<WaveTrajectory> {
    if t_end <= 0.0 || dt <= 0.0 {
        return Err(Error::invalid("T and dt must be positive"));
    }
    if initial.u.len() != grid.num_nodes() || initial.v.len() != grid.num_nodes() {
        return Err(Error::invalid("initial state does not match the grid"));
    }
    let k = assemble_stiffness(grid, a);
    let w = grid.node_weights();
    // Gershgorin bound on the generalized spectrum: lambda <= max row
    // sum of |K| over the lumped mass; the scheme needs dt <= 2/sqrt(l).
    let mut lmax: f64 = 0.0;
    for i in 0..grid.num_nodes() {
        let row: f64 = (k.indptr[i]..k.indptr[i + 1]).map(|p| k.data[p].abs()).sum();
        lmax = lmax.max(row / w[i]);
    }
    let steps = (t_end / dt - 1e-9).ceil().max(1.0);
    let dt = t_end / steps;
    let nsteps = steps as usize;
    if dt * lmax.sqrt() > 2.0 {
        return Err(Error::invalid(format!(
            "dt = {dt:.3e} violates the stability bound {:.3e}",
            2.0 / lmax.sqrt()
        )));
    }
    let boundary_nodes = grid.boundary_nodes();
    let faces = Face::all(grid.d);
    let bw_pairs = grid.boundary_weights(&faces);
    let bw_of: std::collections::HashMap<usize, f64> = bw_pairs.iter().copied().collect();
    let boundary_weights: Vec<f64> =
        boundary_nodes.iter().map(|idx| *bw_of.get(idx).unwrap_or(&0.0)).collect();
    let interior = grid.interior_nodes();
    let n = grid.num_nodes();
    let stride = sample_stride.max(1);

    let apply_g = |u: &mut [f64], t: f64| {
        if let Some(g) = g {
            for &idx in &boundary_nodes {
                u[idx] = g(t, idx);
            }
        } else {
            for &idx in &boundary_nodes {
                u[idx] = 0.0;
            }
        }
    };
    let accel = |u: &[f64], t: f64, out: &mut Vec<f64>| {
        k.matvec(u, out);
        for &idx in &interior {
            let fv = f.map_or(0.0, |f| f(t, idx));
            out[idx] = fv - out[idx] / w[idx];
        }
    };

    let mut u_prev = initial.u.clone();
    apply_g(&mut u_prev, 0.0);
    let mut acc = vec![0.0; n];
    accel(&u_prev, 0.0, &mut acc);
    // second-order start: u1 = u0 + dt v0 + dt^2/2 a(u0)
    let mut u_cur = u_prev.clone();
    for &idx in &interior {
        u_cur[idx] = u_prev[idx] + dt * initial.v[idx] + 0.5 * dt * dt * acc[idx];
    }
    apply_g(&mut u_cur, dt);

    let mut traj = WaveTrajectory {
        grid: grid.clone(),
        dt,
        times: Vec::with_capacity(nsteps + 1),
        energy: Vec::with_capacity(nsteps + 1),
        boundary_grad_sq: Vec::with_capacity(nsteps + 1),
        boundary_nodes: boundary_nodes.clone(),
        boundary_weights: boundary_weights.clone(),
        conormal: Vec::with_capacity(nsteps + 1),
        samples: Vec::new(),
        sample_stride: stride,
    };
    let homogeneous = g.is_none() && f.is_none();
    let mut e0 = 0.0;
    let mut ku = vec![0.0; n];
    // step n covers u^n with centered velocity (u^{n+1} - u^{n-1})/2dt
    let mut record = |traj: &mut WaveTrajectory,
                      step: usize,
                      u_n: &[f64],
                      v_n: Vec<f64>,
                      ku: &mut Vec<f64>|
     -> Result<()> {
        let t = step as f64 * dt;
        k.matvec(u_n, ku);
        let kin: f64 = v_n.iter().zip(&w).map(|(v, w)| v * v * w).sum();
        let en = 0.5 * (crate::fem::dot(u_n, ku).max(0.0) + kin);
        traj.times.push(t);
        traj.energy.push(en);
        traj.boundary_grad_sq.push(boundary_grad_sq(grid, u_n, &faces));
        traj.conormal.push(
            boundary_nodes
                .iter()
                .zip(&boundary_weights)
                .map(|(&idx, &bw)| if bw > 0.0 { ku[idx] / bw } else { 0.0 })
                .collect(),
        );
        if step == 0 {
            e0 = en;
        } else if homogeneous && en > 1e6 * (e0 + 1e-300) {
            return Err(Error::Unstable(format!(
                "energy grew from {e0:.3e} to {en:.3e} by t = {t:.3}"
            )));
        }
        if step % stride == 0 || step == nsteps {
            traj.samples.push(WaveState { t, u: u_n.to_vec(), v: v_n });
        }
        Ok(())
    };

    record(&mut traj, 0, &u_prev, initial.v.clone(), &mut ku)?;
    // march one level past T so the last recorded velocity is centered
    let mut u_next = vec![0.0; n];
    for step in 1..=nsteps {
        let t = step as f64 * dt;
        accel(&u_cur, t, &mut acc);
        for &idx in &interior {
            u_next[idx] = 2.0 * u_cur[idx] - u_prev[idx] + dt * dt * acc[idx];
        }
        apply_g(&mut u_next, t + dt);
        let v: Vec<f64> = (0..n).map(|i| (u_next[i] - u_prev[i]) / (2.0 * dt)).collect();
        record(&mut traj, step, &u_cur, v, &mut ku)?;
        std::mem::swap(&mut u_prev, &mut u_cur);
        std::mem::swap(&mut u_cur, &mut u_next);
    }
    Ok(traj)
}

/// Time-trapezoid of the recorded boundary-gradient-square series.
pub fn boundary_gradient_integral(traj: &WaveTrajectory) -> f64 {
    let n = traj.boundary_grad_sq.len();
    if n < 2 {
        return 0.0;
    }
    let mut s = 0.5 * (traj.boundary_grad_sq[0] + traj.boundary_grad_sq[n - 1]);
    s += traj.boundary_grad_sq[1..n - 1].iter().sum::<f64>();
    s * traj.dt
}

/// Exact modal solution of the homogenized problem on filtered data:
/// u = sum_k (a_k cos(sqrt(l) t) + b_k sin(sqrt(l) t)/sqrt(l)) psi_k.
pub fn eigen_solution(basis: &EigenBasis, fd: &FilteredData, t: f64) -> WaveState {
    let n = basis.grid.num_nodes();
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    for (k, (&ak, &bk)) in fd.a.iter().zip(&fd.b).enumerate() {
        let om = basis.lambdas[k].sqrt();
        let (s, c) = (om * t).sin_cos();
        let cu = ak * c + bk * s / om;
        let cv = -ak * om * s + bk * c;
        for i in 0..n {
            u[i] += cu * basis.psi[k][i];
            v[i] += cv * basis.psi[k][i];
        }
    }
    WaveState { t, u, v }
}
