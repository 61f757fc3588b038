//! Experiment layer: corrector-error convergence sweeps, the Rellich
//! residual check, observability ratios on filtered data, and per-mode
//! boundary trace tables.

use crate::cell::{homogenize, solve_correctors, HomogenizedTensor};
use crate::coeff::PeriodicCoefficientField;
use crate::elliptic::{dirichlet_correctors, DirichletCorrector};
use crate::fem::{
    boundary_gradient, element_gradients, grad_l2, l2_nodal, loglog_fit, DirichletOperator,
    Domain, Face, Grid, TensorField,
};
use crate::spectral::{eigenpairs, frequency_threshold, EigenBasis, FilteredData};
use crate::wave::{
    boundary_gradient_integral, integrate, stable_dt, WaveState, WaveTrajectory,
};
use crate::{Error, Result};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// One product-sine mode of the homogenized operator with displacement
/// coefficient `a` and velocity coefficient `b`.
#[derive(Debug, Clone, Copy)]
pub struct Mode {
    pub k: [usize; 2],
    pub a: f64,
    pub b: f64,
}

/// Closed-form solution of the constant-coefficient wave problem with
/// diagonal tensor, used as the homogenized reference in the sweeps.
#[derive(Debug, Clone)]
pub struct ModalSolution {
    pub d: usize,
    pub lengths: [f64; 2],
    pub a_diag: [f64; 2],
    pub modes: Vec<Mode>,
}

impl ModalSolution {
    pub fn new(hat: &HomogenizedTensor, domain: &Domain, modes: Vec<Mode>) -> Result<ModalSolution> {
        let d = hat.d;
        if d == 2 && hat.a[0][1].abs() > 1e-6 * hat.a[0][0].abs() {
            return Err(Error::invalid(
                "modal reference requires a diagonal homogenized tensor",
            ));
        }
        Ok(ModalSolution {
            d,
            lengths: domain.lengths,
            a_diag: [hat.a[0][0], hat.a[1][1]],
            modes,
        })
    }

    fn kappa(&self, m: &Mode) -> [f64; 2] {
        let pi = std::f64::consts::PI;
        let mut k = [0.0; 2];
        for i in 0..self.d {
            k[i] = m.k[i] as f64 * pi / self.lengths[i];
        }
        k
    }

    pub fn lambda(&self, m: &Mode) -> f64 {
        let k = self.kappa(m);
        (0..self.d).map(|i| self.a_diag[i] * k[i] * k[i]).sum()
    }

    /// normalized product sine at x
    fn shape(&self, m: &Mode, x: [f64; 2]) -> f64 {
        let k = self.kappa(m);
        let mut s = 1.0;
        for i in 0..self.d {
            s *= (2.0 / self.lengths[i]).sqrt() * (k[i] * x[i]).sin();
        }
        s
    }

    fn shape_grad(&self, m: &Mode, x: [f64; 2]) -> [f64; 2] {
        let k = self.kappa(m);
        let mut parts = [0.0; 2];
        for i in 0..self.d {
            let norm = (2.0 / self.lengths[i]).sqrt();
            parts[i] = norm;
        }
        let mut g = [0.0; 2];
        if self.d == 1 {
            g[0] = parts[0] * k[0] * (k[0] * x[0]).cos();
        } else {
            g[0] = parts[0] * k[0] * (k[0] * x[0]).cos() * parts[1] * (k[1] * x[1]).sin();
            g[1] = parts[0] * (k[0] * x[0]).sin() * parts[1] * k[1] * (k[1] * x[1]).cos();
        }
        g
    }

    /// time factors (for u and for du/dt) of a mode at time t
    fn clock(&self, m: &Mode, t: f64) -> (f64, f64) {
        let om = self.lambda(m).sqrt();
        let (s, c) = (om * t).sin_cos();
        (m.a * c + m.b * s / om, -m.a * om * s + m.b * c)
    }

    pub fn value(&self, x: [f64; 2], t: f64) -> f64 {
        self.modes.iter().map(|m| self.clock(m, t).0 * self.shape(m, x)).sum()
    }

    pub fn dt_value(&self, x: [f64; 2], t: f64) -> f64 {
        self.modes.iter().map(|m| self.clock(m, t).1 * self.shape(m, x)).sum()
    }

    pub fn grad(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let mut g = [0.0; 2];
        for m in &self.modes {
            let (cu, _) = self.clock(m, t);
            let sg = self.shape_grad(m, x);
            for i in 0..self.d {
                g[i] += cu * sg[i];
            }
        }
        g
    }

    pub fn dt_grad(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let mut g = [0.0; 2];
        for m in &self.modes {
            let (_, cv) = self.clock(m, t);
            let sg = self.shape_grad(m, x);
            for i in 0..self.d {
                g[i] += cv * sg[i];
            }
        }
        g
    }

    pub fn u_at(&self, grid: &Grid, t: f64) -> Vec<f64> {
        (0..grid.num_nodes()).map(|i| self.value(grid.node_coords(i), t)).collect()
    }

    pub fn v_at(&self, grid: &Grid, t: f64) -> Vec<f64> {
        (0..grid.num_nodes()).map(|i| self.dt_value(grid.node_coords(i), t)).collect()
    }

    /// ||Laplace u(0)||_{L2}: sqrt of sum a_k^2 |kappa|^4 (exact).
    pub fn h2_norm_initial(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                let k = self.kappa(m);
                let k2: f64 = (0..self.d).map(|i| k[i] * k[i]).sum();
                m.a * m.a * k2 * k2
            })
            .sum::<f64>()
            .sqrt()
    }

    /// ||grad du/dt(0)||_{L2}: sqrt of sum b_k^2 |kappa|^2 (exact).
    pub fn h1_norm_velocity(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                let k = self.kappa(m);
                let k2: f64 = (0..self.d).map(|i| k[i] * k[i]).sum();
                m.b * m.b * k2
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Energy-norm components of the corrected difference
/// w = u_eps - u0 - (Phi_k - x_k) d_k u0 at one state:
/// returns (||grad w||, ||dw/dt||).
pub fn corrector_error(
    grid: &Grid,
    state: &WaveState,
    modal: &ModalSolution,
    phi: &DirichletCorrector,
) -> (f64, f64) {
    let n = grid.num_nodes();
    let t = state.t;
    let mut w = vec![0.0; n];
    let mut wt = vec![0.0; n];
    for i in 0..n {
        let x = grid.node_coords(i);
        let g0 = modal.grad(x, t);
        let gt = modal.dt_grad(x, t);
        let mut corr = 0.0;
        let mut corr_t = 0.0;
        for k in 0..grid.d {
            let dphi = phi.phi[k][i] - x[k];
            corr += dphi * g0[k];
            corr_t += dphi * gt[k];
        }
        w[i] = state.u[i] - modal.value(x, t) - corr;
        wt[i] = state.v[i] - modal.dt_value(x, t) - corr_t;
    }
    (grad_l2(grid, &w), l2_nodal(grid, &wt))
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct RateRow {
    pub eps: f64,
    pub h: f64,
    pub dt: f64,
    /// sup over sampled times of ||grad w|| + ||dw/dt||
    pub energy_err: f64,
    /// sup over sampled times of ||u_eps - u0||_{L2}
    pub l2_err: f64,
    /// energy_err / (eps * data scale): the observed constant of the
    /// first-order estimate
    pub ratio_main: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    /// (slope, intercept, r2) of log energy_err vs log eps
    pub slope_energy: Option<(f64, f64, f64)>,
    pub slope_l2: Option<(f64, f64, f64)>,
    /// set when the errors sit at the discretization floor and a fit
    /// would be meaningless
    pub floor: bool,
}

pub struct SweepParams {
    pub nodes_per_eps: usize,
    pub min_nodes: usize,
    pub cell_resolution: usize,
    pub t_end: f64,
    pub cfl: f64,
    pub tol: f64,
    pub samples: usize,
}

impl Default for SweepParams {
    fn default() -> Self {
        SweepParams {
            nodes_per_eps: 8,
            min_nodes: 64,
            cell_resolution: 256,
            t_end: 0.5,
            cfl: 0.5,
            tol: 1e-10,
            samples: 16,
        }
    }
}

fn sweep_grid(domain: &Domain, eps: f64, p: &SweepParams) -> Grid {
    let mut n = [0usize; 2];
    for i in 0..domain.d {
        let from_eps = (domain.lengths[i] * p.nodes_per_eps as f64 / eps).ceil() as usize;
        n[i] = from_eps.max(p.min_nodes);
    }
    Grid::domain(domain, n)
}

/// The corrector-error sweep: fixed homogenized data (phi_0, phi_1) given
/// as modes, per-eps matched oscillating data, integration to T, and the
/// log-log fit of the energy error against eps. Also carries the plain
/// L2 error so `l2_rate` is the same sweep read off a different column.
pub fn rate_sweep(
    field: &PeriodicCoefficientField,
    domain: &Domain,
    eps_list: &[f64],
    modes: Vec<Mode>,
    p: &SweepParams,
) -> Result<RateTable> {
    if eps_list.is_empty() {
        return Err(Error::invalid("empty epsilon list"));
    }
    for w in eps_list.windows(2) {
        if w[1] >= w[0] {
            return Err(Error::invalid("epsilons must be strictly decreasing"));
        }
    }
    let cset = solve_correctors(field, p.cell_resolution, p.tol)?;
    let hat = homogenize(field, &cset)?;
    let modal = ModalSolution::new(&hat, domain, modes)?;
    let data_scale = modal.h2_norm_initial() + modal.h1_norm_velocity();
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let grid = sweep_grid(domain, eps, p);
        let a_eps = crate::coeff::sample_epsilon(field, eps, &grid)?;
        // matched data: L_eps phi_eps0 = L_0 phi_0 with the shared phi_1
        let mut phi0 = modal.u_at(&grid, 0.0);
        for idx in grid.boundary_nodes() {
            phi0[idx] = 0.0;
        }
        let a0 = TensorField::constant(grid.d, hat.a, &grid);
        let op0 = DirichletOperator::new(grid.clone(), &a0);
        let load = op0.k.apply(&phi0);
        let op_eps = DirichletOperator::new(grid.clone(), &a_eps);
        let phi_eps0 = op_eps.solve(&load, &vec![0.0; grid.num_nodes()], p.tol)?;
        let phi1 = modal.v_at(&grid, 0.0);
        let dt = stable_dt(&grid, field.mu, p.cfl);
        let steps = (p.t_end / dt).ceil() as usize;
        let stride = (steps / p.samples).max(1);
        let traj = integrate(
            &grid,
            &a_eps,
            &WaveState { t: 0.0, u: phi_eps0, v: phi1 },
            None,
            None,
            p.t_end,
            dt,
            stride,
        )?;
        let phi = dirichlet_correctors(field, eps, &grid, p.tol)?;
        let mut energy_err = 0.0f64;
        let mut l2_err = 0.0f64;
        for s in &traj.samples {
            let (gw, vw) = corrector_error(&grid, s, &modal, &phi);
            energy_err = energy_err.max(gw + vw);
            let u0 = modal.u_at(&grid, s.t);
            let du: Vec<f64> = s.u.iter().zip(&u0).map(|(a, b)| a - b).collect();
            l2_err = l2_err.max(l2_nodal(&grid, &du));
        }
        rows.push(RateRow {
            eps,
            h: if grid.d == 1 { grid.h[0] } else { grid.h[0].max(grid.h[1]) },
            dt: traj.dt,
            energy_err,
            l2_err,
            ratio_main: energy_err / (eps * data_scale.max(1e-300)),
        });
    }
    let chi_max = cset.sup_norms.iter().fold(0.0f64, |m, &v| m.max(v));
    let table = fit_table(rows, data_scale, chi_max);
    Ok(table)
}

fn fit_table(rows: Vec<RateRow>, data_scale: f64, chi_max: f64) -> RateTable {
    let emax = rows.iter().map(|r| r.energy_err).fold(0.0f64, f64::max);
    let emin = rows.iter().map(|r| r.energy_err).fold(f64::INFINITY, f64::min);
    // No cell-scale oscillation (vanishing correctors) means the two
    // operators coincide and whatever error remains is the grid floor;
    // likewise when the errors refuse to spread across the sweep.
    let floor = chi_max < 1e-8
        || emax < 1e-7 * data_scale.max(1e-300)
        || emax / emin.max(1e-300) < 1.3;
    let (se, sl) = if floor {
        (None, None)
    } else {
        let xs: Vec<f64> = rows.iter().map(|r| r.eps).collect();
        let ye: Vec<f64> = rows.iter().map(|r| r.energy_err).collect();
        let yl: Vec<f64> = rows.iter().map(|r| r.l2_err).collect();
        (Some(loglog_fit(&xs, &ye)), Some(loglog_fit(&xs, &yl)))
    };
    RateTable { rows, slope_energy: se, slope_l2: sl, floor }
}

/// Same sweep, reported for the plain L2 distance (the slope of the
/// `l2_err` column).
pub fn l2_rate(
    field: &PeriodicCoefficientField,
    domain: &Domain,
    eps_list: &[f64],
    modes: Vec<Mode>,
    p: &SweepParams,
) -> Result<RateTable> {
    rate_sweep(field, domain, eps_list, modes, p)
}

/// Per-element coefficient space-derivative d a^eps_ij / d x_k for the
/// Rellich identity; chain rule brings in 1/eps.
pub fn coefficient_gradient(
    field: &PeriodicCoefficientField,
    eps: f64,
    grid: &Grid,
) -> Result<Vec<[[[f64; 2]; 2]; 2]>> {
    if !field.smooth {
        return Err(Error::invalid(
            "the Rellich term needs a differentiable coefficient",
        ));
    }
    let mut out = vec![[[[0.0; 2]; 2]; 2]; grid.num_elements()];
    for e in 0..grid.num_elements() {
        let x = grid.element_center(e);
        let y = [x[0] / eps, x[1] / eps];
        for k in 0..grid.d {
            for i in 0..grid.d {
                for j in 0..grid.d {
                    out[e][k][i][j] = field.grad_entry(i, j, k, y) / eps;
                }
            }
        }
    }
    Ok(out)
}

/// Residual of the boundary identity for a zero-boundary, force-free
/// trajectory with the radial field h = x - x0: |LHS - RHS| over
/// (|LHS| + |RHS|). Sampled states are used as the time quadrature, so
/// the trajectory should be recorded with a small sample stride.
pub fn rellich_residual(
    traj: &WaveTrajectory,
    a: &TensorField,
    dadx: Option<&[[[[f64; 2]; 2]; 2]]>,
    x0: [f64; 2],
) -> Result<f64> {
    let grid = &traj.grid;
    let d = grid.d;
    if traj.samples.len() < 3 {
        return Err(Error::invalid("need at least 3 sampled states"));
    }
    let vol = grid.element_volume();
    let w = grid.node_weights();
    let faces = Face::all(d);
    let bw = grid.boundary_weights(&faces);
    let ne = grid.num_elements();
    // per-sample values of the boundary term and the interior terms
    let mut lhs_t = Vec::with_capacity(traj.samples.len());
    let mut rhs_t = Vec::with_capacity(traj.samples.len());
    // boundary-adjacent element lookup for the coefficient at the wall
    let elem_near = |idx: usize| -> usize {
        let c = grid.node_coords(idx);
        let ne_ax = grid.ne();
        let i = ((c[0] / grid.h[0]).floor() as usize).min(ne_ax[0] - 1);
        let j = if d == 2 {
            ((c[1] / grid.h[1]).floor() as usize).min(ne_ax[1] - 1)
        } else {
            0
        };
        i + ne_ax[0] * j
    };
    for s in &traj.samples {
        let grads = element_gradients(grid, &s.u);
        // LHS: sum over boundary nodes of <h,n> a grad u . grad u
        let mut lhs = 0.0;
        for &(idx, weight) in &bw {
            let g = boundary_gradient(grid, &s.u, idx);
            let av = &a.values[elem_near(idx)];
            let mut agg = 0.0;
            for i in 0..d {
                for j in 0..d {
                    agg += av[i][j] * g[j] * g[i];
                }
            }
            let x = grid.node_coords(idx);
            // outward normal times h summed over the faces the node sits on
            let mut hn = 0.0;
            let nf = grid.node_faces(idx);
            for f in &nf {
                let n = f.normal();
                hn += (0..d).map(|i| (x[i] - x0[i]) * n[i]).sum::<f64>() / nf.len() as f64;
            }
            lhs += weight * hn * agg;
        }
        // RHS interior terms with h = x - x0: div h = d, grad h = I
        let mut kinetic = 0.0;
        for i in 0..grid.num_nodes() {
            kinetic += w[i] * s.v[i] * s.v[i];
        }
        let mut elastic = 0.0;
        let mut dadx_term = 0.0;
        for e in 0..ne {
            let av = &a.values[e];
            let g = grads[e];
            let mut agg = 0.0;
            for i in 0..d {
                for j in 0..d {
                    agg += av[i][j] * g[j] * g[i];
                }
            }
            elastic += vol * agg;
            if let Some(da) = dadx {
                let x = grid.element_center(e);
                for k in 0..d {
                    let hk = x[k] - x0[k];
                    let mut t = 0.0;
                    for i in 0..d {
                        for j in 0..d {
                            t += da[e][k][i][j] * g[j] * g[i];
                        }
                    }
                    dadx_term += vol * hk * t;
                }
            }
        }
        lhs_t.push(lhs);
        rhs_t.push(d as f64 * (kinetic - elastic) - dadx_term + 2.0 * elastic);
    }
    let trap = |vals: &[f64]| -> f64 {
        let mut s = 0.0;
        for (i, pair) in traj.samples.windows(2).enumerate() {
            s += 0.5 * (vals[i] + vals[i + 1]) * (pair[1].t - pair[0].t);
        }
        s
    };
    let lhs = trap(&lhs_t);
    let mut rhs = trap(&rhs_t);
    // time-endpoint terms: int h_k d_k u (x,t) du/dt (x,t) at T and 0
    let endpoint = |s: &WaveState| -> f64 {
        let grads = element_gradients(grid, &s.u);
        let mut acc = 0.0;
        for e in 0..ne {
            let x = grid.element_center(e);
            let nodes = grid.element_nodes(e);
            let nn = if d == 1 { 2.0 } else { 4.0 };
            let vbar: f64 = nodes.iter().take(if d == 1 { 2 } else { 4 }).map(|&i| s.v[i]).sum::<f64>() / nn;
            let mut hgrad = 0.0;
            for k in 0..d {
                hgrad += (x[k] - x0[k]) * grads[e][k];
            }
            acc += vol * hgrad * vbar;
        }
        acc
    };
    rhs += 2.0 * (endpoint(traj.samples.last().unwrap()) - endpoint(&traj.samples[0]));
    Ok((lhs - rhs).abs() / (lhs.abs() + rhs.abs() + 1e-300))
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ObsRow {
    pub eps: f64,
    pub n_threshold: f64,
    pub trial: usize,
    /// ||grad phi_0||^2 + ||phi_1||^2 after normalization
    pub energy: f64,
    /// (1/T) int_0^T int |grad u|^2
    pub boundary: f64,
    pub ratio: f64,
    /// true for the recorded unfiltered high-mode illustration
    pub unfiltered: bool,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ObservabilityReport {
    pub t_end: f64,
    pub r0: f64,
    pub rows: Vec<ObsRow>,
    /// per-eps (max ratio, min ratio) over filtered trials
    pub per_eps: Vec<(f64, f64, f64)>,
    /// spread of the per-eps max ratios and of the per-eps min ratios
    pub upper_spread: f64,
    pub lower_spread: f64,
}

/// Random filtered trials of the boundary observability ratio across an
/// epsilon sweep, with N chosen per the threshold rule.
#[allow(clippy::too_many_arguments)]
pub fn observability_ratios(
    field: &PeriodicCoefficientField,
    domain: &Domain,
    eps_list: &[f64],
    c0: f64,
    t_end: Option<f64>,
    trials: usize,
    seed: u64,
    p: &SweepParams,
) -> Result<ObservabilityReport> {
    let r0 = domain.r0();
    let t_end = t_end.unwrap_or(4.0 * r0);
    let mut rows = Vec::new();
    let mut per_eps = Vec::new();
    for (ei, &eps) in eps_list.iter().enumerate() {
        let grid = sweep_grid(domain, eps, p);
        let a_eps = crate::coeff::sample_epsilon(field, eps, &grid)?;
        let n_threshold = frequency_threshold(eps, t_end, c0);
        // grow the basis until it clears the threshold
        let mut count = 8.max(2 * grid.d);
        let basis = loop {
            let b = eigenpairs(&grid, &a_eps, count, p.tol)?;
            if *b.lambdas.last().unwrap() > n_threshold {
                break b;
            }
            count *= 2;
        };
        let keep = basis.dim_below(n_threshold);
        if keep == 0 {
            return Err(Error::invalid(format!(
                "threshold N = {n_threshold:.3} at eps = {eps} retains no modes (lambda_1 = {:.3})",
                basis.lambdas[0]
            )));
        }
        let w = grid.node_weights();
        let dt = stable_dt(&grid, field.mu, p.cfl);
        let mut ratios = Vec::new();
        for trial in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed.wrapping_mul(0x9e3779b97f4a7c15)
                    .wrapping_add((ei as u64) << 32)
                    .wrapping_add(trial as u64),
            );
            let normal = rand_distr::StandardNormal;
            let a: Vec<f64> = (0..keep).map(|_| rng.sample(normal)).collect();
            let b: Vec<f64> = (0..keep).map(|_| rng.sample(normal)).collect();
            let fd = FilteredData { threshold: n_threshold, a, b };
            let (u0, v0) = basis.synthesize(&fd);
            // plain gradient norm, not the a-weighted form, so the ratio
            // compares like against like across coefficients
            let gnorm = grad_l2(&grid, &u0);
            let energy = gnorm * gnorm + v0.iter().zip(&w).map(|(v, w)| v * v * w).sum::<f64>();
            if energy <= 0.0 {
                continue;
            }
            let scale = energy.sqrt();
            let init = WaveState {
                t: 0.0,
                u: u0.iter().map(|x| x / scale).collect(),
                v: v0.iter().map(|x| x / scale).collect(),
            };
            let traj = integrate(&grid, &a_eps, &init, None, None, t_end, dt, usize::MAX)?;
            let boundary = boundary_gradient_integral(&traj) / t_end;
            let ratio = boundary / 1.0;
            ratios.push(ratio);
            rows.push(ObsRow {
                eps,
                n_threshold,
                trial,
                energy: 1.0,
                boundary,
                ratio,
                unfiltered: false,
            });
        }
        let rmax = ratios.iter().fold(0.0f64, |m, &v| m.max(v));
        let rmin = ratios.iter().fold(f64::INFINITY, |m, &v| m.min(v));
        per_eps.push((eps, rmax, rmin));
        // one unfiltered high-mode trial at the coarsest eps, recorded
        // for illustration only
        if ei == 0 {
            let target = 1.0 / eps;
            let mut count_hi = count;
            let hi_basis = loop {
                let b = eigenpairs(&grid, &a_eps, count_hi, p.tol)?;
                if *b.lambdas.last().unwrap() > target {
                    break b;
                }
                count_hi *= 2;
            };
            let khi = hi_basis
                .lambdas
                .iter()
                .position(|&l| l > target)
                .unwrap_or(hi_basis.lambdas.len() - 1);
            let gnorm = grad_l2(&grid, &hi_basis.psi[khi]);
            let init = WaveState {
                t: 0.0,
                u: hi_basis.psi[khi].iter().map(|x| x / gnorm).collect(),
                v: vec![0.0; grid.num_nodes()],
            };
            let traj = integrate(&grid, &a_eps, &init, None, None, t_end, dt, usize::MAX)?;
            let boundary = boundary_gradient_integral(&traj) / t_end;
            rows.push(ObsRow {
                eps,
                n_threshold: hi_basis.lambdas[khi],
                trial: trials,
                energy: 1.0,
                boundary,
                ratio: boundary,
                unfiltered: true,
            });
        }
    }
    let upper_max = per_eps.iter().map(|r| r.1).fold(0.0f64, f64::max);
    let upper_min = per_eps.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let lower_max = per_eps.iter().map(|r| r.2).fold(0.0f64, f64::max);
    let lower_min = per_eps.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    Ok(ObservabilityReport {
        t_end,
        r0,
        rows,
        per_eps,
        upper_spread: upper_max / upper_min.max(1e-300),
        lower_spread: lower_max / lower_min.max(1e-300),
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TraceRow {
    pub k: usize,
    pub lambda: f64,
    pub trace: f64,
    /// trace / (lambda (1 + eps lambda))
    pub ratio: f64,
    /// eps^2 lambda <= 1
    pub in_range: bool,
}

/// Boundary trace table of an eigenbasis: the per-mode ratio that the
/// uniform trace bound controls.
pub fn eigen_trace_table(basis: &EigenBasis, eps: f64) -> Vec<TraceRow> {
    basis
        .lambdas
        .iter()
        .zip(&basis.boundary_grad_sq)
        .enumerate()
        .map(|(k, (&lam, &tr))| TraceRow {
            k: k + 1,
            lambda: lam,
            trace: tr,
            ratio: tr / (lam * (1.0 + eps * lam)),
            in_range: eps * eps * lam <= 1.0,
        })
        .collect()
}
