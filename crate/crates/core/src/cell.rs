//! Periodic cell problem: correctors chi_j, the homogenized tensor, the
//! mean-free flux b_ij, and its antisymmetric potential phi_kij.

use crate::coeff::{sym_eig_range, PeriodicCoefficientField};
use crate::fem::{
    assemble_stiffness, cg, element_gradients, element_stiffness_2d, Csr, Grid,
    TensorField,
};
use crate::{Error, Result};
use rayon::prelude::*;

/// Correctors chi_j on the cell grid, zero mean, with the sampled
/// coefficient and stiffness kept for downstream assembly.
pub struct CorrectorSet {
    pub grid: Grid,
    pub coeff: TensorField,
    pub stiffness: Csr,
    /// nodal values of chi_j, one vector per direction
    pub chi: Vec<Vec<f64>>,
    /// relative residual achieved by each solve
    pub residuals: Vec<f64>,
    /// observed sup norms ||chi_j||_inf
    pub sup_norms: Vec<f64>,
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct HomogenizedTensor {
    pub d: usize,
    pub a: [[f64; 2]; 2],
    pub eig_min: f64,
    pub eig_max: f64,
}

/// Mean-free flux entries b_ij at element centers (column j is the flux
/// of the j-th corrector).
pub struct FluxField {
    pub grid: Grid,
    /// values[e][i][j]
    pub values: Vec<[[f64; 2]; 2]>,
    /// relative weak-divergence residual per column
    pub divergence_residual: [f64; 2],
}

/// phi_kij at element centers, antisymmetric in (k, i) by construction.
pub struct FluxCorrector {
    pub grid: Grid,
    /// values[e][k][i][j]
    pub values: Vec<[[[f64; 2]; 2]; 2]>,
    pub sup_norm: f64,
    /// relative L2 residual of the reconstruction d_k phi_kij = b_ij,
    /// measured against the assembled flux
    pub reconstruction_residual: f64,
}

fn subtract_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    for x in v.iter_mut() {
        *x -= m;
    }
}

/// Element load vector for the right side -div(A grad y_j): minus the
/// element stiffness applied to the local (unwrapped) coordinate y_j.
fn cell_rhs(grid: &Grid, a: &TensorField, j: usize) -> Vec<f64> {
    let mut rhs = vec![0.0; grid.num_nodes()];
    for e in 0..grid.num_elements() {
        let nodes = grid.element_nodes(e);
        if grid.d == 1 {
            let av = a.values[e][0][0];
            rhs[nodes[0]] += av;
            rhs[nodes[1]] -= av;
        } else {
            let ke = element_stiffness_2d(&a.values[e], grid.h[0], grid.h[1]);
            let yloc = if j == 0 {
                [0.0, grid.h[0], 0.0, grid.h[0]]
            } else {
                [0.0, 0.0, grid.h[1], grid.h[1]]
            };
            for p in 0..4 {
                let mut s = 0.0;
                for q in 0..4 {
                    s += ke[p][q] * yloc[q];
                }
                rhs[nodes[p]] -= s;
            }
        }
    }
    rhs
}

/// Solve the cell problem for all d correctors on an n-per-axis cell grid.
pub fn solve_correctors(field: &PeriodicCoefficientField, n: usize, tol: f64) -> Result<CorrectorSet> {
    if tol <= 0.0 {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let grid = Grid::cell(field.d, n);
    let coeff = crate::coeff::sample_epsilon(field, 1.0, &grid)?;
    let k = assemble_stiffness(&grid, &coeff);
    let diag = k.diagonal();
    let results: Result<Vec<(Vec<f64>, f64)>> = (0..field.d)
        .into_par_iter()
        .map(|j| {
            let mut rhs = cell_rhs(&grid, &coeff, j);
            subtract_mean(&mut rhs);
            let mut chi = vec![0.0; grid.num_nodes()];
            let out = cg(
                &|x, y| k.matvec(x, y),
                &rhs,
                &mut chi,
                &diag,
                tol,
                10 * grid.num_nodes(),
                Some(&subtract_mean),
            )?;
            subtract_mean(&mut chi);
            Ok((chi, out.relative_residual))
        })
        .collect();
    let results = results?;
    let sup_norms = results
        .iter()
        .map(|(c, _)| c.iter().fold(0.0f64, |m, &v| m.max(v.abs())))
        .collect();
    Ok(CorrectorSet {
        grid,
        coeff,
        stiffness: k,
        residuals: results.iter().map(|r| r.1).collect(),
        chi: results.into_iter().map(|r| r.0).collect(),
        sup_norms,
    })
}

/// Homogenized tensor in the energy (symmetric) form, which is exact for
/// the discrete correctors and second-order accurate in the cell grid.
pub fn homogenize(field: &PeriodicCoefficientField, c: &CorrectorSet) -> Result<HomogenizedTensor> {
    let d = field.d;
    let grid = &c.grid;
    let vol = grid.element_volume();
    let grads: Vec<Vec<[f64; 2]>> = c.chi.iter().map(|chi| element_gradients(grid, chi)).collect();
    let mut a_hat = [[0.0; 2]; 2];
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for e in 0..grid.num_elements() {
                let av = &c.coeff.values[e];
                // e_i . A e_j + e_i . A grad(chi_j) + grad(chi_i) . A e_j
                s += vol * av[i][j];
                for kk in 0..d {
                    s += vol * (av[i][kk] * grads[j][e][kk] + grads[i][e][kk] * av[kk][j]);
                }
            }
            // grad(chi_i) . A grad(chi_j), exact under the assembly quadrature
            let mut kx = vec![0.0; grid.num_nodes()];
            c.stiffness.matvec(&c.chi[j], &mut kx);
            s += crate::fem::dot(&c.chi[i], &kx);
            a_hat[i][j] = s;
        }
    }
    // explicit symmetrization mops up round-off
    if d == 2 {
        let off = 0.5 * (a_hat[0][1] + a_hat[1][0]);
        a_hat[0][1] = off;
        a_hat[1][0] = off;
    }
    let (lo, hi) = sym_eig_range(d, &a_hat);
    let slack = 1e-6 + 10.0 * (grid.h[0] * grid.h[0]);
    if lo < field.mu - slack || hi > 1.0 / field.mu + slack {
        return Err(Error::invalid(format!(
            "homogenized spectrum [{lo:.6}, {hi:.6}] escapes [{:.6}, {:.6}]; cell grid unresolved?",
            field.mu,
            1.0 / field.mu
        )));
    }
    Ok(HomogenizedTensor { d, a: a_hat, eig_min: lo, eig_max: hi })
}

/// Assemble the mean-free flux b_ij = a_ij + a_ik d_k chi_j - a^hat_ij at
/// element centers; the mean is removed exactly after assembly.
pub fn flux_field(c: &CorrectorSet, hat: &HomogenizedTensor) -> FluxField {
    let d = hat.d;
    let grid = c.grid.clone();
    let ne = grid.num_elements();
    let grads: Vec<Vec<[f64; 2]>> = c.chi.iter().map(|chi| element_gradients(&grid, chi)).collect();
    let mut values = vec![[[0.0; 2]; 2]; ne];
    for e in 0..ne {
        let av = &c.coeff.values[e];
        for i in 0..d {
            for j in 0..d {
                let mut b = av[i][j] - hat.a[i][j];
                for kk in 0..d {
                    b += av[i][kk] * grads[j][e][kk];
                }
                values[e][i][j] = b;
            }
        }
    }
    for i in 0..d {
        for j in 0..d {
            let mean = values.iter().map(|v| v[i][j]).sum::<f64>() / ne as f64;
            for v in values.iter_mut() {
                v[i][j] -= mean;
            }
        }
    }
    // Weak divergence of column j, measured with the same quadrature the
    // stiffness uses: r = K chi_j - rhs_j (the constant a^hat e_j part
    // integrates to zero against every periodic basis gradient).
    let mut divergence_residual = [0.0; 2];
    let hmin = if d == 1 { grid.h[0] } else { grid.h[0].min(grid.h[1]) };
    for j in 0..d {
        let mut rhs = cell_rhs(&grid, &c.coeff, j);
        subtract_mean(&mut rhs);
        let mut r = c.stiffness.apply(&c.chi[j]);
        for (ri, bi) in r.iter_mut().zip(&rhs) {
            *ri -= bi;
        }
        // scale against the larger of the flux amplitude and the
        // coefficient amplitude: separable media have b identically
        // zero, and a plain flux-relative residual would divide by noise
        let bmax = values
            .iter()
            .map(|v| v[0][j].abs().max(v[1][j].abs()))
            .fold(0.0f64, f64::max);
        let amax = c
            .coeff
            .values
            .iter()
            .map(|a| a[0][0].abs().max(a[1][1].abs()))
            .fold(0.0f64, f64::max);
        let scale = bmax.max(amax) * hmin.powi(d as i32 - 1);
        let sup = r.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        divergence_residual[j] = if scale > 0.0 { sup / scale } else { sup };
    }
    FluxField { grid, values, divergence_residual }
}

/// Build phi_kij from the flux by the vector-potential route: periodic
/// Poisson solves Laplace f_ij = b_ij, then phi_kij = d_k f_ij - d_i f_kj.
pub fn flux_corrector(b: &FluxField, tol: f64) -> Result<FluxCorrector> {
    let grid = b.grid.clone();
    let d = grid.d;
    let ne = grid.num_elements();
    if d == 1 {
        // the 1D flux vanishes identically; so does its potential
        return Ok(FluxCorrector {
            grid,
            values: vec![[[[0.0; 2]; 2]; 2]; ne],
            sup_norm: 0.0,
            reconstruction_residual: 0.0,
        });
    }
    let lap = assemble_stiffness(&grid, &TensorField::identity(d, &grid));
    let diag = lap.diagonal();
    let vol = grid.element_volume();
    // f[i][j]: nodal potentials
    let mut f = vec![vec![vec![0.0; grid.num_nodes()]; d]; d];
    for i in 0..d {
        for j in 0..d {
            // weak form of -Laplace f = -b: K f = -M b with lumped loads
            let mut rhs = vec![0.0; grid.num_nodes()];
            for e in 0..ne {
                let nodes = grid.element_nodes(e);
                for p in 0..4 {
                    rhs[nodes[p]] -= b.values[e][i][j] * vol / 4.0;
                }
            }
            subtract_mean(&mut rhs);
            let out = cg(
                &|x, y| lap.matvec(x, y),
                &rhs,
                &mut f[i][j],
                &diag,
                tol,
                10 * grid.num_nodes(),
                Some(&subtract_mean),
            )?;
            let _ = out;
            subtract_mean(&mut f[i][j]);
        }
    }
    let grads: Vec<Vec<Vec<[f64; 2]>>> = f
        .iter()
        .map(|row| row.iter().map(|fij| element_gradients(&grid, fij)).collect())
        .collect();
    let mut values = vec![[[[0.0; 2]; 2]; 2]; ne];
    let mut sup = 0.0f64;
    for e in 0..ne {
        for k in 0..d {
            for i in 0..d {
                for j in 0..d {
                    let v = grads[i][j][e][k] - grads[k][j][e][i];
                    values[e][k][i][j] = v;
                    sup = sup.max(v.abs());
                }
            }
        }
    }
    // L2 reconstruction residual of d_k phi_kij = b_ij against the flux
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..d {
        for j in 0..d {
            let q: Vec<[f64; 2]> = (0..ne).map(|e| [values[e][0][i][j], values[e][1][i][j]]).collect();
            let src: Vec<f64> = (0..ne).map(|e| b.values[e][i][j]).collect();
            let r = nodal_divergence_l2(&grid, &q, &src);
            num += r * r;
            den += src.iter().map(|s| s * s * vol).sum::<f64>();
        }
    }
    let reconstruction_residual = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
    Ok(FluxCorrector { grid, values, sup_norm: sup, reconstruction_residual })
}

/// L2 norm of the weak defect of div q = s, measured through the lumped
/// mass (residuals divided by nodal measure).
fn nodal_divergence_l2(grid: &Grid, q: &[[f64; 2]], s: &[f64]) -> f64 {
    let mut r = vec![0.0; grid.num_nodes()];
    let vol = grid.element_volume();
    for e in 0..grid.num_elements() {
        let nodes = grid.element_nodes(e);
        let (hx, hy) = (grid.h[0], grid.h[1]);
        let sx = [-1.0, 1.0, -1.0, 1.0];
        let sy = [-1.0, -1.0, 1.0, 1.0];
        for p in 0..4 {
            // weak form: -int q . grad N_p - int s N_p
            r[nodes[p]] -= sx[p] * q[e][0] * hy / 2.0 + sy[p] * q[e][1] * hx / 2.0;
            r[nodes[p]] -= s[e] * hx * hy / 4.0;
        }
    }
    // each periodic node owns measure vol
    (r.iter().map(|v| (v / vol) * (v / vol) * vol).sum::<f64>()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{build_field, FieldSpec};
    use approx::assert_relative_eq;

    fn preset(name: &str) -> PeriodicCoefficientField {
        build_field(&FieldSpec::Preset { name: name.into() }, 0.3, 7.0).unwrap()
    }

    #[test]
    fn constant_correctors_vanish() {
        let f = preset("identity-2d");
        let c = solve_correctors(&f, 16, 1e-10).unwrap();
        for chi in &c.chi {
            assert!(chi.iter().all(|v| v.abs() < 1e-13));
        }
        let hat = homogenize(&f, &c).unwrap();
        assert_relative_eq!(hat.a[0][0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(hat.a[1][1], 1.0, epsilon = 1e-12);
        assert!(hat.a[0][1].abs() < 1e-13);
    }

    #[test]
    fn cosine_1d_corrector_matches_closed_form() {
        // chi'(y) = (2 + cos 2πy)/2 - 1, so chi(y) = sin(2πy)/(4π)
        let f = preset("cosine-1d");
        let n = 256;
        let c = solve_correctors(&f, n, 1e-12).unwrap();
        let tau = std::f64::consts::TAU;
        let mut max_err = 0.0f64;
        for i in 0..n {
            let y = i as f64 / n as f64;
            max_err = max_err.max((c.chi[0][i] - (tau * y).sin() / (2.0 * tau)).abs());
        }
        assert!(max_err < 2.0 / (n * n) as f64 * 10.0, "err {max_err}");
    }

    #[test]
    fn cosine_1d_harmonic_mean() {
        let f = preset("cosine-1d");
        let c = solve_correctors(&f, 256, 1e-12).unwrap();
        let hat = homogenize(&f, &c).unwrap();
        assert!((hat.a[0][0] - 0.5).abs() < 1e-4, "a_hat {}", hat.a[0][0]);
    }

    #[test]
    fn laminate_2d_separates() {
        let f = preset("laminate-2d");
        let c = solve_correctors(&f, 128, 1e-12).unwrap();
        // chi_2 vanishes, chi_1 depends on y1 only
        assert!(c.sup_norms[1] < 1e-10);
        let n = c.grid.nx[0];
        for j in 1..n {
            for i in 0..n {
                let a = c.chi[0][c.grid.node_index(i, 0)];
                let b = c.chi[0][c.grid.node_index(i, j)];
                assert!((a - b).abs() < 1e-10);
            }
        }
        let hat = homogenize(&f, &c).unwrap();
        assert!((hat.a[0][0] - 0.5).abs() < 1e-3, "{}", hat.a[0][0]);
        assert_relative_eq!(hat.a[1][1], 1.0, epsilon = 1e-10);
        assert!(hat.a[0][1].abs() < 1e-10);
    }

    #[test]
    fn laminate_flux_vanishes() {
        let f = preset("laminate-2d");
        let c = solve_correctors(&f, 64, 1e-12).unwrap();
        let hat = homogenize(&f, &c).unwrap();
        let b = flux_field(&c, &hat);
        let sup = b
            .values
            .iter()
            .flat_map(|v| [v[0][0], v[0][1], v[1][0], v[1][1]])
            .fold(0.0f64, |m, x| m.max(x.abs()));
        // the separable corrector kills the flux up to quadrature error
        assert!(sup < 1e-3, "sup {sup}");
    }

    #[test]
    fn checker_flux_mean_free_and_divergence_free() {
        let f = preset("checker-2d");
        let c = solve_correctors(&f, 64, 1e-11).unwrap();
        let hat = homogenize(&f, &c).unwrap();
        let b = flux_field(&c, &hat);
        let ne = b.values.len() as f64;
        for i in 0..2 {
            for j in 0..2 {
                let mean = b.values.iter().map(|v| v[i][j]).sum::<f64>() / ne;
                assert!(mean.abs() < 1e-14);
            }
        }
        assert!(b.divergence_residual[0] < 1e-8, "{}", b.divergence_residual[0]);
        assert!(b.divergence_residual[1] < 1e-8, "{}", b.divergence_residual[1]);
        // the checker medium has a genuinely nonzero flux
        let sup = b.values.iter().map(|v| v[0][0].abs()).fold(0.0f64, f64::max);
        assert!(sup > 1e-3);
    }

    #[test]
    fn flux_corrector_antisymmetric_and_consistent() {
        let f = preset("checker-2d");
        let c = solve_correctors(&f, 48, 1e-11).unwrap();
        let hat = homogenize(&f, &c).unwrap();
        let b = flux_field(&c, &hat);
        let phi = flux_corrector(&b, 1e-11).unwrap();
        for v in &phi.values {
            for k in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        assert_eq!(v[k][i][j], -v[i][k][j]);
                    }
                }
            }
        }
        assert!(phi.sup_norm > 0.0);
    }

    #[test]
    fn flux_corrector_reconstruction_second_order() {
        let f = preset("checker-2d");
        let mut res = Vec::new();
        for &n in &[16usize, 32, 64] {
            let c = solve_correctors(&f, n, 1e-12).unwrap();
            let hat = homogenize(&f, &c).unwrap();
            let b = flux_field(&c, &hat);
            let phi = flux_corrector(&b, 1e-12).unwrap();
            res.push(phi.reconstruction_residual);
        }
        let xs: Vec<f64> = [16.0f64, 32.0, 64.0].iter().map(|n| 1.0 / n).collect();
        let (slope, _, r2) = crate::fem::loglog_fit(&xs, &res);
        assert!(slope > 1.7, "slope {slope} residuals {res:?}");
        assert!(r2 > 0.95, "r2 {r2}");
    }

    #[test]
    fn homogenize_translation_invariant() {
        // A(y + s) has the same homogenized tensor
        let f = build_field(
            &FieldSpec::Expressions {
                d: 1,
                entries: vec!["1/(2+cos(2*pi*(y1+0.3)))".into()],
            },
            0.3,
            7.0,
        )
        .unwrap();
        let c = solve_correctors(&f, 256, 1e-12).unwrap();
        let hat = homogenize(&f, &c).unwrap();
        assert!((hat.a[0][0] - 0.5).abs() < 1e-4, "{}", hat.a[0][0]);
    }

    #[test]
    fn bad_tolerance_rejected() {
        let f = preset("cosine-1d");
        assert!(solve_correctors(&f, 32, 0.0).is_err());
    }

    #[test]
    fn chi_means_vanish() {
        let f = preset("checker-2d");
        let c = solve_correctors(&f, 32, 1e-11).unwrap();
        for chi in &c.chi {
            let m = chi.iter().sum::<f64>() / chi.len() as f64;
            assert!(m.abs() < 1e-13);
        }
    }
}
